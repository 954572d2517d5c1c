#include "cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "isample/augment.hpp"
#include "isample/eval.hpp"
#include "isample/trainer.hpp"

namespace fs = std::filesystem;

namespace isample::cli {

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr))
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + p.string());
}

/// Creates `dir` fresh. An existing path is an error unless `force`.
void claim_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!force) throw std::runtime_error(dir.string() + " exists (use --force to replace it)");
    fs::remove_all(dir);
  }
  if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
  if (!fs::create_directory(dir)) throw std::runtime_error("cannot create " + dir.string());
}

fs::path manifest_path(const fs::path& data) {
  return fs::is_directory(data) ? data / "manifest.txt" : data;
}

int env_threads() {
  const char* v = std::getenv("ISAMPLE_THREADS");
  if (!v || !*v) return 0;
  try {
    return std::max(0, std::stoi(v));
  } catch (const std::exception&) {
    throw ConfigError(std::string("ISAMPLE_THREADS must be an integer, got '") + v + "'");
  }
}

net::DualPathConfig model_named(const std::string& name, int rank) {
  if (name.empty()) return rank == 3 ? net::DualPathConfig::paper3d() : net::DualPathConfig::desk2d();
  if (name == "desk2d") return net::DualPathConfig::desk2d();
  if (name == "paper3d") return net::DualPathConfig::paper3d();
  if (name == "tiny2d") return net::DualPathConfig::tiny(2);
  if (name == "tiny3d") return net::DualPathConfig::tiny(3);
  throw ConfigError("unknown model '" + name + "' (expected desk2d, paper3d, tiny2d or tiny3d)");
}

/// Scales [lo, hi] to the 8-bit range.
void write_pgm(const std::vector<float>& values, int rows, int cols, float lo, float hi, const fs::path& path) {
  std::vector<float> unit(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) unit[i] = std::clamp((values[i] - lo) / (hi - lo), 0.0f, 1.0f);
  eval::export_error_map(unit, {rows, cols}, path);
}

/// Middle z slice of a (z, y, x) plane.
std::vector<float> middle_slice(const float* data, const Extent3& e) {
  const std::size_t plane = std::size_t(e[1]) * e[2];
  return {data + std::size_t(e[0] / 2) * plane, data + std::size_t(e[0] / 2 + 1) * plane};
}

void dump_patches(const train::TrainData& data, net::DualPathNet<float>& model, const train::TrainConfig& cfg,
                  int count, const fs::path& dir) {
  fs::create_directories(dir);
  const auto g = model.geometry();
  auto scfg = cfg.sampler;
  scfg.block = g.output;
  std::vector<sampling::ErrorMapStore::Entry> entries;
  for (const auto& c : data.train) entries.push_back({c.id, c.image.dims()});
  sampling::ErrorMapStore store(std::move(entries));
  const auto index = sampling::ClassIndex::from_cases(data.train);
  Rng rng(derive_seed(cfg.seed, 0xD0));
  const auto batch = sampling::fill_batch(store, index, scfg, rng);
  const float range = kHounsfieldClamp / kIntensityScale;
  const int K = model.config().num_classes;
  for (int s = 0; s < count && s < int(batch.picks.size()); ++s) {
    const auto& p = batch.picks[s];
    const Case& c = data.train[p.image];
    auto pair = augment::extract_patch_pair(c.image, c.labels, p.origin, g, cfg.augment, rng, nn::Mode::train);
    const std::string stem = "slot" + std::to_string(s) + "_" + c.id + "_c" + std::to_string(p.cls);
    write_pgm(middle_slice(pair.hr.data(), g.hr_input), g.hr_input[1], g.hr_input[2], -range, range,
              dir / (stem + "_hr.pgm"));
    write_pgm(middle_slice(pair.lr.data(), g.lr_input), g.lr_input[1], g.lr_input[2], -range, range,
              dir / (stem + "_lr.pgm"));
    std::vector<float> labels(pair.labels.begin(), pair.labels.end());
    write_pgm(middle_slice(labels.data(), g.output), g.output[1], g.output[2], 0.0f, float(K - 1),
              dir / (stem + "_labels.pgm"));
  }
}

struct Options {
  std::string preset, model, sampler, config, split = "validation";
  fs::path out, data, checkpoint, input, maps;
  std::optional<double> epsilon;
  std::optional<std::uint64_t> seed;
  std::vector<double> fg_fraction;
  bool force = false, post_filter = false;
  int dump_patches = 0, axis = 0, slice = -1;
};

int gen_data(const Options& o) {
  auto cfg = SyntheticConfig::preset_named(o.preset.empty() ? "kidney2d" : o.preset);
  if (!o.config.empty()) {
    auto kv = KeyValues::read(o.config);
    cfg.apply(kv.section("data."));
    kv.reject_unused();
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.fg_fraction.empty()) {
    KeyValues kv;
    kv.set("fg_fraction", join(o.fg_fraction));
    cfg.apply(kv);
  }
  cfg.validate();
  claim_output_dir(o.out, o.force);
  auto m = generate_synthetic_dataset(cfg, o.out);
  std::vector<double> sum(cfg.num_classes(), 0.0);
  for (const auto& e : m.entries) {
    auto f = class_fractions(load_labels(m.directory / e.labels, m.num_classes));
    for (std::size_t k = 0; k < f.size(); ++k) sum[k] += f[k];
  }
  std::cout << "wrote " << m.entries.size() << " volumes (" << m.split(Split::train).size() << " train, "
            << m.split(Split::validation).size() << " validation) to " << o.out.string() << "\n";
  for (int k = 1; k < cfg.num_classes(); ++k)
    std::cout << "class " << k << " mean foreground fraction " << sum[k] / double(m.entries.size()) << "\n";
  return ok;
}

int train_cmd(const Options& o, const std::atomic<bool>* stop) {
  const fs::path mpath = manifest_path(o.data);
  const auto manifest = DatasetManifest::load(mpath);
  train::TrainData data{load_split(manifest, Split::train), load_split(manifest, Split::validation)};
  if (data.train.empty()) throw std::runtime_error("manifest has no training entries");
  const int rank = data.train.front().image.rank();

  auto tcfg = train::TrainConfig::preset_named(o.preset.empty() ? "kidney" : o.preset);
  if (rank == 3) tcfg.augment = augment::AugmentConfig::for_rank(3);
  auto model_kv = model_named(o.model, rank).to_keyvalues();
  model_kv.set("num_classes", std::to_string(manifest.num_classes));
  std::string config_text;
  if (!o.config.empty()) {
    config_text = read_file(o.config);
    auto kv = KeyValues::parse(config_text, o.config);
    auto model_section = kv.section("model.");
    for (const auto& [key, value] : model_section.entries()) model_kv.set(key, value);
    tcfg.apply(kv);
    kv.reject_unused();
  }
  if (o.seed) tcfg.seed = *o.seed;
  if (!o.sampler.empty()) tcfg.sampler.mode = sampling::sampler_mode_from_string(o.sampler);
  if (o.epsilon) tcfg.sampler.epsilon = *o.epsilon;
  if (o.post_filter) tcfg.post_filter = true;
  tcfg.threads = env_threads();
  auto mcfg = net::DualPathConfig::from_keyvalues(model_kv);
  {
    // Every model key was consumed above; this catches typos in model.* entries.
    auto check = KeyValues::parse(model_kv.text(), "model config");
    net::DualPathConfig::from_keyvalues(check);
    check.reject_unused();
  }
  tcfg.validate(mcfg.rank);

  claim_output_dir(o.out, o.force);
  KeyValues echo = tcfg.echo();
  const auto model_echo = mcfg.to_keyvalues();
  for (const auto& [key, value] : model_echo.entries()) echo.set("model." + key, value);
  write_file(o.out / "config.txt", echo.text());
  write_file(o.out / "seed.txt", std::to_string(tcfg.seed) + "\n");
  std::vector<fs::path> inputs{mpath};
  for (const auto& e : manifest.entries) {
    inputs.push_back(manifest.directory / e.volume);
    inputs.push_back(manifest.directory / e.labels);
  }
  write_file(o.out / "inputs.sha256",
             inputs_hash(inputs, manifest.directory) + "  dataset\n" + sha256_hex(echo.text()) + "  config\n");

  net::DualPathNet<float> model(mcfg, derive_seed(tcfg.seed, 0x30DE1));
  if (o.dump_patches > 0) dump_patches(data, model, tcfg, o.dump_patches, o.out / "patches");
  auto result = train::run_training(model, data, tcfg, o.out, stop);
  if (result.interrupted) {
    std::cerr << "interrupted after " << result.iterations << " iterations; checkpoint written to "
              << (o.out / "checkpoints" / "interrupted.isck").string() << "\n";
    return interrupted;
  }
  std::cout << "iterations " << result.iterations << "\n";
  std::cout << "final validation mean dice " << result.final_dice << "\n";
  return ok;
}

net::DualPathNet<float> load_model(const fs::path& checkpoint) {
  net::DualPathNet<float> model(net::read_checkpoint_config(checkpoint), 0);
  net::load_checkpoint(model, checkpoint);
  return model;
}

int infer_cmd(const Options& o) {
  auto model = load_model(o.checkpoint);
  auto image = clamp_normalize(load_volume(o.input));
  auto seg = eval::segment(model, image, o.post_filter);
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  if (fs::exists(o.out) && !o.force) throw std::runtime_error(o.out.string() + " exists (use --force to replace it)");
  save_labels(LabelMap(seg.dims, image.spacing(), seg.labels, model.config().num_classes), o.out);
  std::cout << "wrote " << o.out.string() << "\n";
  return ok;
}

int eval_cmd(const Options& o) {
  auto model = load_model(o.checkpoint);
  const auto manifest = DatasetManifest::load(manifest_path(o.data));
  Split split;
  if (o.split == "validation")
    split = Split::validation;
  else if (o.split == "train")
    split = Split::train;
  else
    throw ConfigError("unknown split '" + o.split + "' (expected train or validation)");
  const auto cases = load_split(manifest, split);
  auto report = train::evaluate(model, cases, o.post_filter);
  if (fs::exists(o.out) && !o.force) throw std::runtime_error(o.out.string() + " exists (use --force to replace it)");
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  report.write_csv(o.out);
  const auto means = report.class_mean();
  for (int k = 1; k < report.num_classes; ++k) std::cout << "class " << k << " mean dice " << means[k] << "\n";
  std::cout << "mean dice " << report.mean() << "\n";
  return ok;
}

int export_cmd(const Options& o) {
  std::vector<fs::path> files;
  if (fs::is_directory(o.maps)) {
    for (const auto& e : fs::directory_iterator(o.maps))
      if (e.path().string().ends_with(".err.isvl")) files.push_back(e.path());
  } else {
    files.push_back(o.maps);
  }
  if (files.empty()) throw std::runtime_error("no .err.isvl files in " + o.maps.string());
  std::sort(files.begin(), files.end());
  fs::create_directories(o.out);
  for (const auto& f : files) {
    auto v = load_volume(f);
    const int extent = v.dims()[std::min<std::size_t>(o.axis, v.dims().size() - 1)];
    const int index = v.rank() == 2 ? 0 : (o.slice >= 0 ? o.slice : extent / 2);
    std::string stem = f.filename().string();
    stem = stem.substr(0, stem.size() - std::string(".err.isvl").size());
    const auto out = o.out / (stem + ".pgm");
    if (fs::exists(out) && !o.force) throw std::runtime_error(out.string() + " exists (use --force to replace it)");
    std::vector<float> values(v.voxels().begin(), v.voxels().end());
    eval::export_error_map(values, v.dims(), out, o.axis, index);
    std::cout << out.string() << "\n";
  }
  return ok;
}

}  // namespace

std::string inputs_hash(const std::vector<fs::path>& files, const fs::path& root) {
  std::vector<std::string> lines;
  for (const auto& f : files)
    lines.push_back(sha256_hex(read_file(f)) + "  " + fs::relative(f, root).generic_string() + "\n");
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (const auto& l : lines) all += l;
  return sha256_hex(all);
}

int run(int argc, const char* const* argv, const std::atomic<bool>* stop) {
  CLI::App app{"Adaptive patch sampling for sparse segmentation"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--preset", o.preset, "kidney2d, multiorgan2d or kidney3d");
  gen->add_option("--seed", o.seed, "Generator seed");
  gen->add_option("--fg-fraction", o.fg_fraction, "Foreground share per class")->delimiter(',');
  gen->add_option("--config", o.config, "Key file with data.* keys");
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_flag("--force", o.force, "Replace an existing output directory");

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--data", o.data, "Dataset directory or manifest")->required();
  tr->add_option("--out", o.out, "Run directory")->required();
  tr->add_option("--preset", o.preset, "kidney or multiorgan");
  tr->add_option("--model", o.model, "desk2d, paper3d, tiny2d or tiny3d");
  tr->add_option("--sampler", o.sampler, "isample or uniform");
  tr->add_option("--epsilon", o.epsilon, "Acceptance floor");
  tr->add_option("--seed", o.seed, "Run seed");
  tr->add_option("--config", o.config, "Key file with model.*, train.*, sampler.*, augment.* keys");
  tr->add_flag("--post-filter", o.post_filter, "Largest-component filter during validation");
  tr->add_option("--dump-patches", o.dump_patches, "Write this many extracted patch pairs as PGM");
  tr->add_flag("--force", o.force, "Replace an existing run directory");

  auto* inf = app.add_subcommand("infer", "Segment one volume");
  inf->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  inf->add_option("--input", o.input, "Input volume")->required();
  inf->add_option("--out", o.out, "Output label file")->required();
  inf->add_flag("--post-filter", o.post_filter, "Keep the largest component per class");
  inf->add_flag("--force", o.force, "Replace an existing output file");

  auto* ev = app.add_subcommand("eval", "Dice report for a dataset split");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", o.data, "Dataset directory or manifest")->required();
  ev->add_option("--split", o.split, "validation or train");
  ev->add_option("--out", o.out, "Output CSV")->required();
  ev->add_flag("--post-filter", o.post_filter, "Keep the largest component per class");
  ev->add_flag("--force", o.force, "Replace an existing output file");

  auto* ex = app.add_subcommand("export-maps", "Error maps to PGM slices");
  ex->add_option("--maps", o.maps, "Snapshot directory or .err.isvl file")->required();
  ex->add_option("--out", o.out, "Output directory")->required();
  ex->add_option("--axis", o.axis, "Slice axis for 3D maps")->check(CLI::Range(0, 2));
  ex->add_option("--slice", o.slice, "Slice index, default middle");
  ex->add_flag("--force", o.force, "Replace existing images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ok : usage;
  }
  try {
    if (gen->parsed()) return gen_data(o);
    if (tr->parsed()) return train_cmd(o, stop);
    if (inf->parsed()) return infer_cmd(o);
    if (ev->parsed()) return eval_cmd(o);
    if (ex->parsed()) return export_cmd(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return usage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return failure;
  }
  return usage;
}

}  // namespace isample::cli
