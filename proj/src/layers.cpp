#include "isample/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace isample::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;

bool is_pointwise(const ConvShape& s) {
  return s.kernel == Extent3{1, 1, 1} && s.stride == 1;
}

/// Rows are (in, kz, ky, kx); columns are output positions of sample b.
template <typename T>
void im2col(const Tensor<T>& x, int b, const ConvShape& s, const Extent3& oe, T* col) {
  const std::size_t P = Tensor<T>::plane_of(oe);
  const int st = s.stride;
  for (int i = 0; i < s.in; ++i) {
    const T* src = x.channel(b, i);
    for (int kz = 0; kz < s.kernel[0]; ++kz)
      for (int ky = 0; ky < s.kernel[1]; ++ky)
        for (int kx = 0; kx < s.kernel[2]; ++kx) {
          T* dst = col;
          col += P;
          for (int oz = 0; oz < oe[0]; ++oz)
            for (int oy = 0; oy < oe[1]; ++oy) {
              const T* row = src + (std::size_t(oz * st + kz) * x.sp[1] + (oy * st + ky)) * x.sp[2] + kx;
              if (st == 1) {
                std::copy(row, row + oe[2], dst);
              } else {
                for (int ox = 0; ox < oe[2]; ++ox) dst[ox] = row[ox * st];
              }
              dst += oe[2];
            }
        }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvShape& s, const Extent3& oe, Tensor<T>& gx, int b) {
  const std::size_t P = Tensor<T>::plane_of(oe);
  const int st = s.stride;
  for (int i = 0; i < s.in; ++i) {
    T* dst_base = gx.channel(b, i);
    for (int kz = 0; kz < s.kernel[0]; ++kz)
      for (int ky = 0; ky < s.kernel[1]; ++ky)
        for (int kx = 0; kx < s.kernel[2]; ++kx) {
          const T* src = col;
          col += P;
          for (int oz = 0; oz < oe[0]; ++oz)
            for (int oy = 0; oy < oe[1]; ++oy) {
              T* row = dst_base + (std::size_t(oz * st + kz) * gx.sp[1] + (oy * st + ky)) * gx.sp[2] + kx;
              for (int ox = 0; ox < oe[2]; ++ox) row[ox * st] += src[ox];
              src += oe[2];
            }
        }
  }
}

template <typename T>
void check_conv_input(const Tensor<T>& x, std::size_t wsize, const ConvShape& s) {
  if (x.c != s.in)
    throw ShapeError("conv expects " + std::to_string(s.in) + " input channels, got " +
                     std::to_string(x.c));
  if (wsize != std::size_t(s.out) * s.in * s.kernel_volume())
    throw ShapeError("conv weight count does not match shape");
  for (int a = 0; a < 3; ++a)
    if (x.sp[a] < s.kernel[a])
      throw ShapeError("conv input extent " + std::to_string(x.sp[a]) + " on axis " +
                       std::to_string(a) + " is smaller than kernel " + std::to_string(s.kernel[a]));
}

}  // namespace

template <typename T>
Param<T>::Param(std::string n, std::vector<int> s, bool decays, bool train)
    : name(std::move(n)), shape(std::move(s)), decay(decays), trainable(train) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  value.assign(count, T(0));
  grad.assign(count, T(0));
}

template <typename T>
std::size_t param_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto* p : params)
    if (p->trainable) n += p->size();
  return n;
}

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::dropout: return "dropout";
    case LayerKind::resblock_standard: return "resblock-standard";
    case LayerKind::resblock_bottleneck: return "resblock-bottleneck";
    case LayerKind::fc: return "fc";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

void LayerSpec::validate() const {
  for (int k : kernel)
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("kernel sizes must be odd and >= 1");
  if (in < 1 || out < 1) throw std::invalid_argument("channel counts must be >= 1");
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  if (!(dropout >= 0.0 && dropout <= 1.0))
    throw std::invalid_argument("dropout probability must be in [0, 1]");
}

std::string LayerSpec::describe() const {
  std::ostringstream os;
  os << to_string(kind) << " k=" << extent_to_string(kernel) << " in=" << in << " out=" << out
     << " stride=" << stride;
  if (kind == LayerKind::dropout) os << " p=" << dropout;
  return os.str();
}

Extent3 receptive_field(const std::vector<LayerSpec>& chain, const Extent3& downsample) {
  Extent3 rf{1, 1, 1};
  Extent3 jump = downsample;
  for (const auto& s : chain) {
    int repeats = 0;
    switch (s.kind) {
      case LayerKind::conv:
      case LayerKind::fc:
      case LayerKind::resblock_bottleneck: repeats = 1; break;
      case LayerKind::resblock_standard: repeats = 2; break;
      default: break;
    }
    for (int a = 0; a < 3; ++a) {
      rf[a] += repeats * (s.kernel[a] - 1) * jump[a];
      if (s.kind == LayerKind::conv || s.kind == LayerKind::fc) jump[a] *= s.stride;
    }
  }
  return rf;
}

Extent3 ConvShape::output_extent(const Extent3& e) const {
  Extent3 o;
  for (int a = 0; a < 3; ++a) {
    if (e[a] < kernel[a])
      throw ShapeError("extent " + std::to_string(e[a]) + " on axis " + std::to_string(a) +
                       " is smaller than kernel " + std::to_string(kernel[a]));
    o[a] = (e[a] - kernel[a]) / stride + 1;
  }
  return o;
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, std::span<const T> w, std::span<const T> b,
                       const ConvShape& s) {
  check_conv_input(x, w.size(), s);
  const Extent3 oe = s.output_extent(x.sp);
  const std::size_t P = Tensor<T>::plane_of(oe);
  const std::size_t K = std::size_t(s.in) * s.kernel_volume();
  Tensor<T> out(x.n, s.out, oe);
  ConstRowMap<T> W(w.data(), s.out, K);
  RowMat<T> col;
  if (!is_pointwise(s)) col.resize(K, P);
  for (int n = 0; n < x.n; ++n) {
    RowMap<T> O(out.channel(n, 0), s.out, P);
    if (is_pointwise(s)) {
      O.noalias() = W * ConstRowMap<T>(x.channel(n, 0), K, P);
    } else {
      im2col(x, n, s, oe, col.data());
      O.noalias() = W * col;
    }
    if (!b.empty())
      for (int o = 0; o < s.out; ++o) O.row(o).array() += b[o];
  }
  return out;
}

template <typename T>
ConvGradients<T> conv_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                               std::span<const T> w, const ConvShape& s) {
  check_conv_input(x, w.size(), s);
  const Extent3 oe = s.output_extent(x.sp);
  if (grad_out.n != x.n || grad_out.c != s.out || grad_out.sp != oe)
    throw ShapeError("conv backward: grad_out shape does not match the forward pass");
  const std::size_t P = Tensor<T>::plane_of(oe);
  const std::size_t K = std::size_t(s.in) * s.kernel_volume();
  ConvGradients<T> g{Tensor<T>(x.n, x.c, x.sp), std::vector<T>(w.size(), T(0)),
                     std::vector<T>(s.out, T(0))};
  ConstRowMap<T> W(w.data(), s.out, K);
  RowMap<T> GW(g.w.data(), s.out, K);
  RowMat<T> col, gcol;
  if (!is_pointwise(s)) {
    col.resize(K, P);
    gcol.resize(K, P);
  }
  for (int n = 0; n < x.n; ++n) {
    ConstRowMap<T> G(grad_out.channel(n, 0), s.out, P);
    for (int o = 0; o < s.out; ++o) {
      // Plain loop: a vectorized reduction over a mapped row depends on its address.
      const T* row = grad_out.channel(n, o);
      double acc = 0.0;
      for (std::size_t i = 0; i < P; ++i) acc += row[i];
      g.b[o] += static_cast<T>(acc);
    }
    if (is_pointwise(s)) {
      ConstRowMap<T> X(x.channel(n, 0), K, P);
      GW.noalias() += G * X.transpose();
      RowMap<T>(g.x.channel(n, 0), K, P).noalias() = W.transpose() * G;
    } else {
      im2col(x, n, s, oe, col.data());
      GW.noalias() += G * col.transpose();
      gcol.noalias() = W.transpose() * G;
      col2im_add(gcol.data(), s, oe, g.x, n);
    }
  }
  return g;
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename T>
std::vector<T> glorot_init(std::size_t count, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = glorot_limit(fan_in, fan_out);
  std::vector<T> v(count);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-a, a));
  return v;
}

template <typename T>
CrossEntropy softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint16_t> targets,
                                   Tensor<T>* grad) {
  const std::size_t P = logits.plane();
  const int K = logits.c;
  if (targets.size() != std::size_t(logits.n) * P)
    throw ShapeError("targets do not align with the logits' spatial block");
  if (grad) *grad = Tensor<T>(logits.n, K, logits.sp);
  CrossEntropy ce;
  ce.voxels = static_cast<int>(targets.size());
  const double inv = 1.0 / static_cast<double>(ce.voxels);
  std::vector<double> e(K);
  for (int n = 0; n < logits.n; ++n)
    for (std::size_t p = 0; p < P; ++p) {
      const int t = targets[n * P + p];
      if (t >= K)
        throw std::invalid_argument("target label " + std::to_string(t) + " >= class count " +
                                    std::to_string(K));
      double mx = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) mx = std::max(mx, double(logits.channel(n, k)[p]));
      double sum = 0.0;
      for (int k = 0; k < K; ++k) sum += (e[k] = std::exp(double(logits.channel(n, k)[p]) - mx));
      ce.loss += std::log(sum) - (double(logits.channel(n, t)[p]) - mx);
      if (grad)
        for (int k = 0; k < K; ++k)
          grad->channel(n, k)[p] = static_cast<T>((e[k] / sum - (k == t ? 1.0 : 0.0)) * inv);
    }
  ce.loss *= inv;
  return ce;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  Tensor<T> out(logits.n, logits.c, logits.sp);
  const std::size_t P = logits.plane();
  std::vector<double> e(logits.c);
  for (int n = 0; n < logits.n; ++n)
    for (std::size_t p = 0; p < P; ++p) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < logits.c; ++k) mx = std::max(mx, double(logits.channel(n, k)[p]));
      double sum = 0.0;
      for (int k = 0; k < logits.c; ++k) sum += (e[k] = std::exp(double(logits.channel(n, k)[p]) - mx));
      for (int k = 0; k < logits.c; ++k) out.channel(n, k)[p] = static_cast<T>(e[k] / sum);
    }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, Rng& rng, std::vector<T>* mask) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("dropout probability must be in [0, 1]");
  if (mode == Mode::infer || p == 0.0) {
    if (mask) mask->assign(x.size(), T(1));
    return x;
  }
  if (p == 1.0) throw std::invalid_argument("dropout with p = 1 in training zeroes every activation");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> out = x;
  if (mask) mask->resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T m = rng.uniform01() < p ? T(0) : keep_scale;
    out.data[i] *= m;
    if (mask) (*mask)[i] = m;
  }
  return out;
}

// --- Conv ------------------------------------------------------------------

template <typename T>
Conv<T>::Conv(const std::string& name, ConvShape shape, bool decay, Rng& init_rng)
    : shape_(shape),
      w_(name + ".w", {shape.out, shape.in, shape.kernel[0], shape.kernel[1], shape.kernel[2]}, decay),
      b_(name + ".b", {shape.out}, decay) {
  LayerSpec{LayerKind::conv, shape.kernel, shape.in, shape.out, shape.stride, 0.0}.validate();
  const std::size_t kv = shape.kernel_volume();
  w_.value = glorot_init<T>(w_.size(), shape.in * kv, shape.out * kv, init_rng);
}

template <typename T>
Tensor<T> Conv<T>::forward(const Tensor<T>& x, Mode mode) {
  if (mode == Mode::train) input_ = x;
  return conv_forward<T>(x, w_.value, b_.value, shape_);
}

template <typename T>
Tensor<T> Conv<T>::backward(const Tensor<T>& grad_out) {
  auto g = conv_backward<T>(grad_out, input_, w_.value, shape_);
  for (std::size_t i = 0; i < g.w.size(); ++i) w_.grad[i] += g.w[i];
  for (std::size_t i = 0; i < g.b.size(); ++i) b_.grad[i] += g.b[i];
  return std::move(g.x);
}

template <typename T>
void Conv<T>::collect(ParamList<T>& out) {
  out.push_back(&w_);
  out.push_back(&b_);
}

template <typename T>
void Conv<T>::describe(std::vector<LayerSpec>& out) const {
  const bool pointwise = shape_.kernel == Extent3{1, 1, 1};
  out.push_back({pointwise ? LayerKind::fc : LayerKind::conv, shape_.kernel, shape_.in, shape_.out,
                 shape_.stride, 0.0});
}

// --- BatchNorm ---------------------------------------------------------------

template <typename T>
BatchNorm<T>::BatchNorm(const std::string& name, int channels, T initial_scale)
    : channels_(channels),
      scale_(name + ".scale", {channels}, false),
      shift_(name + ".shift", {channels}, false),
      mean_(name + ".running_mean", {channels}, false, false),
      var_(name + ".running_var", {channels}, false, false),
      updates_(name + ".updates", {1}, false, false) {
  std::fill(scale_.value.begin(), scale_.value.end(), initial_scale);
  std::fill(var_.value.begin(), var_.value.end(), T(1));
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.c != channels_) throw ShapeError("batchnorm channel count mismatch");
  const std::size_t P = x.plane();
  Tensor<T> y(x.n, x.c, x.sp);
  if (mode == Mode::infer) {
    for (int c = 0; c < channels_; ++c) {
      const double inv = 1.0 / std::sqrt(double(var_.value[c]) + kEpsilon);
      const double m = mean_.value[c], g = scale_.value[c], s = shift_.value[c];
      for (int n = 0; n < x.n; ++n) {
        const T* src = x.channel(n, c);
        T* dst = y.channel(n, c);
        for (std::size_t p = 0; p < P; ++p) dst[p] = static_cast<T>(g * ((src[p] - m) * inv) + s);
      }
    }
    return y;
  }
  xhat_ = Tensor<T>(x.n, x.c, x.sp);
  inv_std_.assign(channels_, 0.0);
  const double M = static_cast<double>(x.n) * P;
  for (int c = 0; c < channels_; ++c) {
    double sum = 0.0;
    for (int n = 0; n < x.n; ++n) {
      const T* src = x.channel(n, c);
      for (std::size_t p = 0; p < P; ++p) sum += src[p];
    }
    const double mean = sum / M;
    double sq = 0.0;
    for (int n = 0; n < x.n; ++n) {
      const T* src = x.channel(n, c);
      for (std::size_t p = 0; p < P; ++p) sq += (src[p] - mean) * (src[p] - mean);
    }
    const double var = sq / M;
    const double inv = 1.0 / std::sqrt(var + kEpsilon);
    inv_std_[c] = inv;
    const double g = scale_.value[c], s = shift_.value[c];
    for (int n = 0; n < x.n; ++n) {
      const T* src = x.channel(n, c);
      T* xh = xhat_.channel(n, c);
      T* dst = y.channel(n, c);
      for (std::size_t p = 0; p < P; ++p) {
        const double h = (src[p] - mean) * inv;
        xh[p] = static_cast<T>(h);
        dst[p] = static_cast<T>(g * h + s);
      }
    }
    const double unbiased = M > 1.0 ? var * M / (M - 1.0) : var;
    mean_.value[c] = static_cast<T>(kMomentum * mean_.value[c] + (1.0 - kMomentum) * mean);
    var_.value[c] = static_cast<T>(kMomentum * var_.value[c] + (1.0 - kMomentum) * unbiased);
  }
  updates_.value[0] += T(1);
  return y;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& grad_out) {
  if (!grad_out.same_shape(xhat_)) throw ShapeError("batchnorm backward without a training forward");
  const std::size_t P = grad_out.plane();
  const double M = static_cast<double>(grad_out.n) * P;
  Tensor<T> gx(grad_out.n, grad_out.c, grad_out.sp);
  for (int c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < grad_out.n; ++n) {
      const T* g = grad_out.channel(n, c);
      const T* xh = xhat_.channel(n, c);
      for (std::size_t p = 0; p < P; ++p) {
        sum_g += g[p];
        sum_gx += double(g[p]) * xh[p];
      }
    }
    shift_.grad[c] += static_cast<T>(sum_g);
    scale_.grad[c] += static_cast<T>(sum_gx);
    const double k = scale_.value[c] * inv_std_[c] / M;
    for (int n = 0; n < grad_out.n; ++n) {
      const T* g = grad_out.channel(n, c);
      const T* xh = xhat_.channel(n, c);
      T* dst = gx.channel(n, c);
      for (std::size_t p = 0; p < P; ++p)
        dst[p] = static_cast<T>(k * (M * g[p] - sum_g - xh[p] * sum_gx));
    }
  }
  return gx;
}

template <typename T>
void BatchNorm<T>::collect(ParamList<T>& out) {
  out.push_back(&scale_);
  out.push_back(&shift_);
  out.push_back(&mean_);
  out.push_back(&var_);
  out.push_back(&updates_);
}

template <typename T>
void BatchNorm<T>::describe(std::vector<LayerSpec>& out) const {
  out.push_back({LayerKind::batchnorm, {1, 1, 1}, channels_, channels_, 1, 0.0});
}

// --- ReLU / Dropout ---------------------------------------------------------------

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> y = x;
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  if (mode == Mode::train) output_ = y;
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(output_.data[i] > T(0))) g.data[i] = T(0);
  return g;
}

template <typename T>
Dropout<T>::Dropout(double p, Rng* rng) : p_(p), rng_(rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("dropout probability must be in [0, 1]");
}

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, Mode mode) {
  if (mode == Mode::infer) return x;
  active_ = p_ > 0.0;
  return dropout<T>(x, p_, mode, *rng_, active_ ? &mask_ : nullptr);
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& grad_out) {
  if (!active_) return grad_out;
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= mask_[i];
  return g;
}

// --- Sequential ------------------------------------------------------------

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <typename T>
void Sequential<T>::collect(ParamList<T>& out) {
  for (auto& l : layers_) l->collect(out);
}

template <typename T>
Extent3 Sequential<T>::output_extent(const Extent3& in) const {
  Extent3 e = in;
  for (const auto& l : layers_) e = l->output_extent(e);
  return e;
}

template <typename T>
int Sequential<T>::output_channels(int in) const {
  for (const auto& l : layers_) in = l->output_channels(in);
  return in;
}

template <typename T>
void Sequential<T>::describe(std::vector<LayerSpec>& out) const {
  for (const auto& l : layers_) l->describe(out);
}

template <typename T>
std::unique_ptr<Sequential<T>> make_conv_block(const std::string& name, ConvShape shape, Rng& rng) {
  auto seq = std::make_unique<Sequential<T>>();
  seq->add(std::make_unique<Conv<T>>(name + ".conv", shape, true, rng));
  seq->add(std::make_unique<BatchNorm<T>>(name + ".bn", shape.out));
  seq->add(std::make_unique<ReLU<T>>());
  return seq;
}

// --- ResBlock --------------------------------------------------------------

template <typename T>
ResBlock<T>::ResBlock(const std::string& name, ResidualKind kind, int in, int out, Extent3 kernel,
                      Rng& rng)
    : kind_(kind), in_(in), out_(out), kernel_(kernel) {
  LayerSpec{kind == ResidualKind::standard ? LayerKind::resblock_standard
                                           : LayerKind::resblock_bottleneck,
            kernel, in, out, 1, 0.0}
      .validate();
  const Extent3 one{1, 1, 1};
  auto final_bn = std::make_unique<BatchNorm<T>>(name + ".bn_last", out, T(0));
  final_norm_ = final_bn.get();
  if (kind == ResidualKind::standard) {
    branch_.add(std::make_unique<Conv<T>>(name + ".conv1", ConvShape{in, out, kernel, 1}, true, rng));
    branch_.add(std::make_unique<BatchNorm<T>>(name + ".bn1", out));
    branch_.add(std::make_unique<ReLU<T>>());
    branch_.add(std::make_unique<Conv<T>>(name + ".conv2", ConvShape{out, out, kernel, 1}, true, rng));
    for (int a = 0; a < 3; ++a) shrink_[a] = kernel[a] - 1;
  } else {
    const int mid = std::max(1, out / kBottleneckReduction);
    branch_.add(std::make_unique<Conv<T>>(name + ".reduce", ConvShape{in, mid, one, 1}, true, rng));
    branch_.add(std::make_unique<BatchNorm<T>>(name + ".bn1", mid));
    branch_.add(std::make_unique<ReLU<T>>());
    branch_.add(std::make_unique<Conv<T>>(name + ".conv", ConvShape{mid, mid, kernel, 1}, true, rng));
    branch_.add(std::make_unique<BatchNorm<T>>(name + ".bn2", mid));
    branch_.add(std::make_unique<ReLU<T>>());
    branch_.add(std::make_unique<Conv<T>>(name + ".expand", ConvShape{mid, out, one, 1}, true, rng));
    for (int a = 0; a < 3; ++a) shrink_[a] = (kernel[a] - 1) / 2;
  }
  branch_.add(std::move(final_bn));
  if (in != out)
    projection_ = std::make_unique<Conv<T>>(name + ".proj", ConvShape{in, out, one, 1}, true, rng);
}

template <typename T>
Extent3 ResBlock<T>::output_extent(const Extent3& in) const {
  return branch_.output_extent(in);
}

template <typename T>
Tensor<T> ResBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.c != in_) throw ShapeError("residual block channel mismatch");
  if (mode == Mode::train) input_extent_ = x.sp;
  Tensor<T> y = branch_.forward(x, mode);
  Tensor<T> sc = crop(x, shrink_, y.sp);
  if (projection_) sc = projection_->forward(sc, mode);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = y.data[i] + sc.data[i];
    y.data[i] = v > T(0) ? v : T(0);
  }
  if (mode == Mode::train) output_ = y;
  return y;
}

template <typename T>
Tensor<T> ResBlock<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(output_.data[i] > T(0))) g.data[i] = T(0);
  Tensor<T> gx = branch_.backward(g);
  Tensor<T> gsc = projection_ ? projection_->backward(g) : g;
  Tensor<T> back = uncrop(gsc, shrink_, input_extent_);
  for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += back.data[i];
  return gx;
}

template <typename T>
void ResBlock<T>::collect(ParamList<T>& out) {
  branch_.collect(out);
  if (projection_) projection_->collect(out);
}

template <typename T>
void ResBlock<T>::describe(std::vector<LayerSpec>& out) const {
  out.push_back({kind_ == ResidualKind::standard ? LayerKind::resblock_standard
                                                  : LayerKind::resblock_bottleneck,
                 kernel_, in_, out_, 1, 0.0});
}

#define ISAMPLE_INSTANTIATE(T)                                                                    \
  template struct Param<T>;                                                                       \
  template std::size_t param_count<T>(const ParamList<T>&);                                       \
  template Tensor<T> conv_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,    \
                                     const ConvShape&);                                           \
  template ConvGradients<T> conv_backward<T>(const Tensor<T>&, const Tensor<T>&,                  \
                                             std::span<const T>, const ConvShape&);               \
  template std::vector<T> glorot_init<T>(std::size_t, std::size_t, std::size_t, Rng&);            \
  template CrossEntropy softmax_cross_entropy<T>(const Tensor<T>&, std::span<const std::uint16_t>, \
                                                 Tensor<T>*);                                     \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                                \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Mode, Rng&, std::vector<T>*);           \
  template class Conv<T>;                                                                         \
  template class BatchNorm<T>;                                                                    \
  template class ReLU<T>;                                                                         \
  template class Dropout<T>;                                                                      \
  template class Sequential<T>;                                                                   \
  template std::unique_ptr<Sequential<T>> make_conv_block<T>(const std::string&, ConvShape, Rng&); \
  template class ResBlock<T>;

ISAMPLE_INSTANTIATE(float)
ISAMPLE_INSTANTIATE(double)

}  // namespace isample::nn
