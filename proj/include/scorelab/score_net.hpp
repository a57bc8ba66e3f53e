#pragma once

// Parametric score families: a small fully connected noise-prediction network
// with hand-written reverse-mode gradients, and the linear family
// s(x) = A x + b whose population and empirical minimizers are closed-form.

#include "scorelab/core.hpp"
#include "scorelab/normal.hpp"
#include "scorelab/ou_process.hpp"
#include "scorelab/targets.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace scorelab {

/// Anything that evaluates an approximate score s(x, t).
template <class S>
concept ScoreSource = requires(const S& s, const Vec& x, double t) {
  { s.score(x, t) } -> std::convertible_to<Vec>;
};

// ---------------------------------------------------------------------------
// Activations

enum class Activation { gelu, tanh, identity, relu };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::gelu: return "gelu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

/// |act(z)| <= A + B |z|.
struct GrowthBound {
  double A = 0.0;
  double B = 1.0;
};

inline GrowthBound growth_bound(Activation a) {
  return a == Activation::tanh ? GrowthBound{1.0, 0.0} : GrowthBound{0.0, 1.0};
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::gelu: return z * normal::cdf(z);
    case Activation::tanh: return std::tanh(z);
    case Activation::identity: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
  }
  return z;
}

inline double activate_grad(Activation a, double z) {
  switch (a) {
    case Activation::gelu: return normal::cdf(z) + z * normal::pdf(z);
    case Activation::tanh: {
      const double th = std::tanh(z);
      return 1.0 - th * th;
    }
    case Activation::identity: return 1.0;
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

inline double activate_second(Activation a, double z) {
  switch (a) {
    case Activation::gelu: return normal::pdf(z) * (2.0 - z * z);
    case Activation::tanh: {
      const double th = std::tanh(z);
      return -2.0 * th * (1.0 - th * th);
    }
    default: return 0.0;
  }
}

// ---------------------------------------------------------------------------
// Network

/// Input is [x, t, e^{-t}, sigma_t^2]; output is a noise prediction in R^d.
/// `depth` counts affine layers, so depth 1 is a single linear map and every
/// layer except the last is followed by the activation.
struct MlpArchitecture {
  int dim = 1;
  int depth = 3;
  int width = 32;
  Activation activation = Activation::gelu;

  int input_dim() const { return dim + 3; }

  struct Layer {
    int in = 0;
    int out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
  };

  std::vector<Layer> layers() const {
    if (dim < 1 || dim > kMaxDim) throw ConfigError("MlpArchitecture: dim must be 1..3");
    if (depth < 1 || width < 1) throw ConfigError("MlpArchitecture: depth and width must be >= 1");
    std::vector<Layer> out;
    std::size_t off = 0;
    int in = input_dim();
    for (int l = 0; l < depth; ++l) {
      const int o = (l + 1 == depth) ? dim : width;
      Layer layer{in, o, off, off + static_cast<std::size_t>(in) * o};
      off = layer.bias_offset + static_cast<std::size_t>(o);
      out.push_back(layer);
      in = o;
    }
    return out;
  }

  std::size_t param_count() const {
    const auto ls = layers();
    return ls.back().bias_offset + static_cast<std::size_t>(ls.back().out);
  }

  bool operator==(const MlpArchitecture&) const = default;
};

inline Eigen::VectorXd time_features(const Vec& x, double t) {
  const auto p = ou_marginal_params(t);
  Eigen::VectorXd u(x.size() + 3);
  u.head(x.size()) = x;
  u[x.size()] = t;
  u[x.size() + 1] = p.shrink;
  u[x.size() + 2] = p.sigma_sq;
  return u;
}

/// Column-stacked features for a batch of (x, t) pairs.
inline Eigen::MatrixXd time_features(std::span<const Vec> xs, std::span<const double> ts) {
  if (xs.size() != ts.size()) throw ContractError("time_features: points and times differ in length");
  const int d = xs.empty() ? 1 : static_cast<int>(xs.front().size());
  Eigen::MatrixXd u(d + 3, static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) u.col(static_cast<Eigen::Index>(i)) = time_features(xs[i], ts[i]);
  return u;
}

class MlpScoreModel {
 public:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  MlpScoreModel(MlpArchitecture arch, Eigen::VectorXd params)
      : arch_(arch), layers_(arch.layers()), theta_(std::move(params)) {
    if (static_cast<std::size_t>(theta_.size()) != arch_.param_count())
      throw ContractError("MlpScoreModel: parameter count does not match architecture");
    if (!theta_.allFinite()) throw NumericError("MlpScoreModel: non-finite parameter");
  }

  static MlpScoreModel zeros(const MlpArchitecture& arch) {
    return MlpScoreModel(arch, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(arch.param_count())));
  }

  /// Weights and biases uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static MlpScoreModel init(const MlpArchitecture& arch, Rng& rng) {
    Eigen::VectorXd theta(static_cast<Eigen::Index>(arch.param_count()));
    for (const auto& l : arch.layers()) {
      const double r = 1.0 / std::sqrt(static_cast<double>(l.in));
      std::uniform_real_distribution<double> u(-r, r);
      for (std::size_t i = l.weight_offset; i < l.bias_offset + static_cast<std::size_t>(l.out); ++i)
        theta[static_cast<Eigen::Index>(i)] = u(rng);
    }
    return MlpScoreModel(arch, std::move(theta));
  }

  const MlpArchitecture& architecture() const { return arch_; }
  const std::vector<MlpArchitecture::Layer>& layers() const { return layers_; }
  const Eigen::VectorXd& params() const { return theta_; }
  int dim() const { return arch_.dim; }

  Eigen::Map<const RowMatrix> weight(std::size_t l) const {
    const auto& L = layers_.at(l);
    return {theta_.data() + L.weight_offset, L.out, L.in};
  }
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const {
    const auto& L = layers_.at(l);
    return {theta_.data() + L.bias_offset, L.out};
  }

  /// Intermediate values kept for the backward pass.
  struct Tape {
    std::vector<Eigen::MatrixXd> pre;  // pre-activations of hidden layers
    std::vector<Eigen::MatrixXd> act;  // act[0] = input, act[l] = output of layer l-1
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, Tape* tape = nullptr) const {
    if (inputs.rows() != arch_.input_dim()) throw ContractError("MlpScoreModel: input has wrong feature count");
    if (!theta_.allFinite()) throw NumericError("MlpScoreModel: non-finite parameter");
    if (tape) {
      tape->pre.clear();
      tape->act.assign(1, inputs);
    }
    Eigen::MatrixXd h = inputs;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Eigen::MatrixXd z = weight(l) * h;
      z.colwise() += bias(l);
      if (l + 1 == layers_.size()) return z;
      h = z.unaryExpr([a = arch_.activation](double v) { return activate(a, v); });
      if (tape) {
        tape->pre.push_back(std::move(z));
        tape->act.push_back(h);
      }
    }
    return h;
  }

  /// Adds d/dtheta of sum_n <cotangent_n, f(u_n)> to `grad`.
  void backward(const Tape& tape, const Eigen::MatrixXd& cotangent, Eigen::VectorXd& grad) const {
    if (grad.size() != theta_.size()) grad = Eigen::VectorXd::Zero(theta_.size());
    Eigen::MatrixXd g = cotangent;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const auto& L = layers_[li];
      Eigen::Map<RowMatrix> gw(grad.data() + L.weight_offset, L.out, L.in);
      gw.noalias() += g * tape.act[li].transpose();
      grad.segment(static_cast<Eigen::Index>(L.bias_offset), L.out) += g.rowwise().sum();
      if (li == 0) break;
      Eigen::MatrixXd up = weight(li).transpose() * g;
      const auto& z = tape.pre[li - 1];
      g = up.cwiseProduct(z.unaryExpr([a = arch_.activation](double v) { return activate_grad(a, v); }));
    }
  }

  Vec predict_noise(const Vec& x, double t) const {
    if (x.size() != arch_.dim) throw DomainError("MlpScoreModel: point has wrong dimension");
    const Eigen::VectorXd out = forward(time_features(x, t));
    return Vec(out);
  }

  /// s(x, t) = -eps(x, t) / sigma_t.
  Vec score(const Vec& x, double t) const {
    const double s2 = ou_marginal_params(t).sigma_sq;
    if (s2 == 0.0) throw DivisionGuardError("MlpScoreModel::score: sigma_t = 0");
    return -predict_noise(x, t) / std::sqrt(s2);
  }

  /// Gradient of <cotangent, eps(x, t)> with respect to the parameters.
  /// Scores for the columns of X, all at time t.
  Eigen::MatrixXd score_batch(const Eigen::MatrixXd& X, double t) const {
    const auto p = ou_marginal_params(t);
    if (p.sigma_sq == 0.0) throw DivisionGuardError("MlpScoreModel::score: sigma_t = 0");
    Eigen::MatrixXd u(X.rows() + 3, X.cols());
    u.topRows(X.rows()) = X;
    u.row(X.rows()).setConstant(t);
    u.row(X.rows() + 1).setConstant(p.shrink);
    u.row(X.rows() + 2).setConstant(p.sigma_sq);
    return forward(u) / -std::sqrt(p.sigma_sq);
  }

  Eigen::VectorXd grad_params(const Vec& x, double t, const Vec& cotangent) const {
    Tape tape;
    forward(time_features(x, t), &tape);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(theta_.size());
    backward(tape, Eigen::MatrixXd(Eigen::VectorXd(cotangent)), g);
    return g;
  }

  MlpScoreModel with_params(Eigen::VectorXd p) const { return MlpScoreModel(arch_, std::move(p)); }

  double max_abs_param() const { return theta_.size() ? theta_.cwiseAbs().maxCoeff() : 0.0; }

 private:
  MlpArchitecture arch_;
  std::vector<MlpArchitecture::Layer> layers_;
  Eigen::VectorXd theta_;
};

// ---------------------------------------------------------------------------
// Linear growth and Massart certificates

/// |f_j(x)| <= c0 + c1 ||x||, component-wise.
struct AffineEnvelope {
  std::vector<double> c0;
  std::vector<double> c1;
};

/// Pushes an input envelope through affine layers with activation after each
/// but the last; this is the layer-by-layer induction behind linear growth.
template <class WeightFn, class BiasFn>
AffineEnvelope propagate_envelope(AffineEnvelope env, std::size_t depth, WeightFn&& weight, BiasFn&& bias,
                                  GrowthBound act) {
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& w = weight(l);
    const auto& b = bias(l);
    AffineEnvelope next{std::vector<double>(static_cast<std::size_t>(w.rows())),
                        std::vector<double>(static_cast<std::size_t>(w.rows()))};
    for (Eigen::Index j = 0; j < w.rows(); ++j) {
      double a0 = std::abs(b[j]), a1 = 0.0;
      for (Eigen::Index i = 0; i < w.cols(); ++i) {
        a0 += std::abs(w(j, i)) * env.c0[static_cast<std::size_t>(i)];
        a1 += std::abs(w(j, i)) * env.c1[static_cast<std::size_t>(i)];
      }
      if (l + 1 < depth) {
        a0 = act.A + act.B * a0;
        a1 = act.B * a1;
      }
      next.c0[static_cast<std::size_t>(j)] = a0;
      next.c1[static_cast<std::size_t>(j)] = a1;
    }
    env = std::move(next);
  }
  return env;
}

/// C with max_j |f_j| <= C (1 + ||x||).
inline double envelope_constant(const AffineEnvelope& env) {
  double c = 0.0;
  for (std::size_t j = 0; j < env.c0.size(); ++j) c = std::max({c, env.c0[j], env.c1[j]});
  return c;
}

struct GrowthCertificate {
  double C_theta = 0.0;
  double max_abs_param = 0.0;  // B
  double massart_bound = 0.0;  // (B W)^L (d + L / W)
  AffineEnvelope envelope;
};

inline double massart_bound(double B, int width, int depth, int dim) {
  return std::pow(B * width, depth) * (dim + static_cast<double>(depth) / width);
}

/// Certificate for the noise-prediction output over times t in [0, t_max].
inline GrowthCertificate linear_growth_certificate(const MlpScoreModel& model, double t_max = 10.0) {
  const auto& a = model.architecture();
  AffineEnvelope in;
  for (int j = 0; j < a.dim; ++j) {
    in.c0.push_back(0.0);
    in.c1.push_back(1.0);
  }
  for (double bound : {t_max, 1.0, 1.0}) {
    in.c0.push_back(bound);
    in.c1.push_back(0.0);
  }
  auto env = propagate_envelope(
      std::move(in), model.layers().size(), [&](std::size_t l) { return MlpScoreModel::RowMatrix(model.weight(l)); },
      [&](std::size_t l) { return Eigen::VectorXd(model.bias(l)); }, growth_bound(a.activation));
  const double B = model.max_abs_param();
  return {envelope_constant(env), B, massart_bound(B, a.width, a.depth, a.dim), std::move(env)};
}

// ---------------------------------------------------------------------------
// Linear family

/// Time-local score model s(x) = A x + b.
struct LinearScoreModel {
  Mat A;
  Vec b;

  static LinearScoreModel zeros(int d) { return {Mat::Zero(d, d), Vec::Zero(d)}; }

  int dim() const { return static_cast<int>(b.size()); }

  Vec operator()(const Vec& x) const {
    if (!A.allFinite() || !b.allFinite()) throw NumericError("LinearScoreModel: non-finite parameter");
    return A * x + b;
  }
  Vec score(const Vec& x, double /*t*/) const { return (*this)(x); }

  /// Flat parameters: A row-major, then b.
  Eigen::VectorXd flat() const {
    const int d = dim();
    Eigen::VectorXd p(d * d + d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) p[i * d + j] = A(i, j);
    p.tail(d) = b;
    return p;
  }

  static LinearScoreModel from_flat(const Eigen::VectorXd& p, int d) {
    if (p.size() != d * d + d) throw ContractError("LinearScoreModel::from_flat: wrong length");
    LinearScoreModel m = zeros(d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m.A(i, j) = p[i * d + j];
    m.b = p.tail(d);
    return m;
  }
};

/// One model per grid time; looked up by exact time match.
template <class Model>
class PerStepScore {
 public:
  PerStepScore(std::vector<double> times, std::vector<Model> models)
      : times_(std::move(times)), models_(std::move(models)) {
    if (times_.size() != models_.size()) throw ContractError("PerStepScore: times and models differ in length");
  }

  const Model& at_time(double t) const {
    for (std::size_t i = 0; i < times_.size(); ++i)
      if (std::abs(times_[i] - t) <= 1e-12 * std::max(1.0, std::abs(t))) return models_[i];
    throw ContractError("PerStepScore: no model for t = " + std::to_string(t));
  }

  Vec score(const Vec& x, double t) const {
    if constexpr (std::is_same_v<Model, LinearScoreModel>)
      return at_time(t)(x);
    else
      return at_time(t).score(x, t);
  }

  Eigen::MatrixXd score_batch(const Eigen::MatrixXd& X, double t) const
    requires std::is_same_v<Model, MlpScoreModel>
  {
    return at_time(t).score_batch(X, t);
  }

  const std::vector<double>& times() const { return times_; }
  const std::vector<Model>& models() const { return models_; }

 private:
  std::vector<double> times_;
  std::vector<Model> models_;
};

/// Mean and covariance of the OU marginal of a mixture at time t.
inline std::pair<Vec, Mat> marginal_moments(const GaussianMixture& target, double t) {
  const auto pt = target.marginal_at(t);
  const Vec m = pt.mean();
  Mat c = Mat::Zero(pt.dim(), pt.dim());
  for (std::size_t i = 0; i < pt.components(); ++i) {
    const Vec dm = pt.means()[i] - m;
    c += pt.weights()[i] * (pt.covariances()[i] + dm * dm.transpose());
  }
  return {m, c};
}

/// Population minimizer of E||A x + b - grad log p_t(x)||^2. Since
/// E[s(x) x^T] = -I and E[s] = 0, this is the score of the Gaussian with the
/// marginal's mean and covariance; for a single Gaussian it is the exact score.
inline LinearScoreModel population_linear_minimizer(const GaussianMixture& target, double t) {
  const auto [m, c] = marginal_moments(target, t);
  const Mat prec = c.llt().solve(Mat::Identity(c.rows(), c.cols()));
  return {-prec, prec * m};
}

/// Regression response used for the empirical minimizer.
enum class RegressionTarget {
  conditional_score,  // -noise / sigma_t, the denoising score matching target
  true_score,         // grad log p_t(x_i)
};

/// Least-squares fit of responses y_i on (x_i, 1).
inline LinearScoreModel fit_linear_score(std::span<const Vec> xs, std::span<const Vec> ys) {
  if (xs.size() != ys.size() || xs.empty()) throw ContractError("fit_linear_score: misaligned sample");
  const int d = static_cast<int>(xs.front().size());
  const auto n = static_cast<Eigen::Index>(xs.size());
  if (n < d + 1) throw RankError("fit_linear_score: need at least d + 1 draws");
  Eigen::MatrixXd X(n, d + 1), Y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    X.row(i).head(d) = xs[static_cast<std::size_t>(i)].transpose();
    X(i, d) = 1.0;
    Y.row(i) = ys[static_cast<std::size_t>(i)].transpose();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-12);
  if (qr.rank() < d + 1) throw RankError("fit_linear_score: singular design matrix");
  const Eigen::MatrixXd beta = qr.solve(Y);  // (d+1) x d
  LinearScoreModel m = LinearScoreModel::zeros(d);
  m.A = beta.topRows(d).transpose();
  m.b = beta.row(d).transpose();
  return m;
}

struct LinearMinimizers {
  LinearScoreModel theta_a;
  LinearScoreModel theta_b;
};

inline LinearMinimizers closed_form_minimizers(const GaussianMixture& target, double t,
                                               std::span<const ForwardDraw> sample,
                                               RegressionTarget response = RegressionTarget::conditional_score) {
  const double s2 = ou_marginal_params(t).sigma_sq;
  if (s2 == 0.0) throw DivisionGuardError("closed_form_minimizers: sigma_t = 0");
  std::vector<Vec> xs, ys;
  xs.reserve(sample.size());
  ys.reserve(sample.size());
  const auto pt = target.marginal_at(t);
  for (const auto& dr : sample) {
    if (dr.t != t) throw ContractError("closed_form_minimizers: draw taken at a different time");
    xs.push_back(dr.x);
    ys.push_back(response == RegressionTarget::conditional_score ? Vec(-dr.noise / std::sqrt(s2)) : pt.score(dr.x));
  }
  return {population_linear_minimizer(target, t), fit_linear_score(xs, ys)};
}

/// E||(A1 - A2) x + (b1 - b2)||^2 for x with mean m and covariance c.
inline double linear_gap_second_moment(const LinearScoreModel& a, const LinearScoreModel& b, const Vec& m,
                                       const Mat& c) {
  const Mat dA = a.A - b.A;
  const Vec db = a.b - b.b;
  return (dA * c * dA.transpose()).trace() + (dA * m + db).squaredNorm();
}

}  // namespace scorelab
