#pragma once

#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vve/errors.hpp"

namespace vve {

inline constexpr int kModelFormatVersion = 1;

/// Architecture of the action-value network: the flattened occupancy grid
/// passes through three hidden layers, the result is fused with the
/// feature vector in one more hidden layer, and a linear head emits one
/// value per action.
struct NetworkSpec {
  int grid_dim = 512;   ///< rows*cols of the occupancy grid
  int fusion_dim = 25;  ///< fused feature vector length
  int hidden1 = 128;
  int hidden2 = 128;
  int hidden3 = 128;
  int fusion_hidden = 32;
  int actions = 5;

  bool operator==(const NetworkSpec&) const = default;
};

/// Per-layer gradients, same shapes as the parameters.
struct NetGrads {
  Eigen::MatrixXd w1, w2, w3, w4, w5;
  Eigen::VectorXd b1, b2, b3, b4, b5;
};

/// One training batch.  Grids are binary, so each sample carries just the
/// indices of its occupied cells; layer 1 is evaluated by summing the
/// corresponding weight columns.
struct BatchInput {
  std::vector<std::vector<std::uint16_t>> grid_idx;
  Eigen::MatrixXd feats; ///< fusion_dim x batch
};

/// Activations saved by the batched forward pass for backpropagation.
struct ForwardCache {
  Eigen::MatrixXd a1, a2, a3, concat, a4, q;
};

class QNetwork {
public:
  QNetwork() = default;
  explicit QNetwork(const NetworkSpec& spec) : spec_(spec) { allocate(); }

  const NetworkSpec& spec() const { return spec_; }

  /// Uniform initialization scaled by each layer's fan-in,
  /// U(-sqrt(1/fan_in), +sqrt(1/fan_in)) for weights and biases.
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto fill = [&rng](Eigen::MatrixXd& w, Eigen::VectorXd& b, int fan_in) {
      const double bound = std::sqrt(1.0 / fan_in);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = dist(rng);
    };
    fill(w1, b1, spec_.grid_dim);
    fill(w2, b2, spec_.hidden1);
    fill(w3, b3, spec_.hidden2);
    fill(w4, b4, spec_.hidden3 + spec_.fusion_dim);
    fill(w5, b5, spec_.fusion_hidden);
  }

  std::size_t parameter_count() const {
    return w1.size() + w2.size() + w3.size() + w4.size() + w5.size() +
           b1.size() + b2.size() + b3.size() + b4.size() + b5.size();
  }

  /// Action values for a single observation.
  Eigen::VectorXd forward_one(const std::vector<std::uint16_t>& grid_idx,
                              const Eigen::VectorXd& feats) const {
    Eigen::VectorXd z1 = b1;
    for (auto idx : grid_idx) z1 += w1.col(idx);
    const Eigen::VectorXd a1v = z1.cwiseMax(0.0);
    const Eigen::VectorXd a2v = (w2 * a1v + b2).cwiseMax(0.0);
    const Eigen::VectorXd a3v = (w3 * a2v + b3).cwiseMax(0.0);
    Eigen::VectorXd cat(spec_.hidden3 + spec_.fusion_dim);
    cat << a3v, feats;
    const Eigen::VectorXd a4v = (w4 * cat + b4).cwiseMax(0.0);
    return w5 * a4v + b5;
  }

  /// Batched forward pass; fills the cache when training.
  Eigen::MatrixXd forward(const BatchInput& in, ForwardCache* cache) const {
    const Eigen::Index B = in.feats.cols();
    Eigen::MatrixXd z1 = b1.replicate(1, B);
    for (Eigen::Index j = 0; j < B; ++j)
      for (auto idx : in.grid_idx[static_cast<std::size_t>(j)])
        z1.col(j) += w1.col(idx);
    Eigen::MatrixXd a1m = z1.cwiseMax(0.0);
    Eigen::MatrixXd a2m = ((w2 * a1m).colwise() + b2).cwiseMax(0.0);
    Eigen::MatrixXd a3m = ((w3 * a2m).colwise() + b3).cwiseMax(0.0);
    Eigen::MatrixXd cat(spec_.hidden3 + spec_.fusion_dim, B);
    cat.topRows(spec_.hidden3) = a3m;
    cat.bottomRows(spec_.fusion_dim) = in.feats;
    Eigen::MatrixXd a4m = ((w4 * cat).colwise() + b4).cwiseMax(0.0);
    Eigen::MatrixXd q = (w5 * a4m).colwise() + b5;
    if (cache) {
      cache->a1 = std::move(a1m);
      cache->a2 = std::move(a2m);
      cache->a3 = std::move(a3m);
      cache->concat = std::move(cat);
      cache->a4 = std::move(a4m);
      cache->q = q;
    }
    return q;
  }

  /// Backpropagate dL/dQ through the cached forward pass.
  NetGrads backward(const BatchInput& in, const ForwardCache& c,
                    const Eigen::MatrixXd& dq) const {
    NetGrads g;
    const Eigen::Index B = in.feats.cols();
    g.w5 = dq * c.a4.transpose();
    g.b5 = dq.rowwise().sum();
    Eigen::MatrixXd dz4 =
        (w5.transpose() * dq).cwiseProduct((c.a4.array() > 0.0).cast<double>().matrix());
    g.w4 = dz4 * c.concat.transpose();
    g.b4 = dz4.rowwise().sum();
    Eigen::MatrixXd dcat = w4.transpose() * dz4;
    Eigen::MatrixXd dz3 = dcat.topRows(spec_.hidden3)
                              .cwiseProduct((c.a3.array() > 0.0).cast<double>().matrix());
    g.w3 = dz3 * c.a2.transpose();
    g.b3 = dz3.rowwise().sum();
    Eigen::MatrixXd dz2 = (w3.transpose() * dz3)
                              .cwiseProduct((c.a2.array() > 0.0).cast<double>().matrix());
    g.w2 = dz2 * c.a1.transpose();
    g.b2 = dz2.rowwise().sum();
    Eigen::MatrixXd dz1 = (w2.transpose() * dz2)
                              .cwiseProduct((c.a1.array() > 0.0).cast<double>().matrix());
    g.b1 = dz1.rowwise().sum();
    g.w1 = Eigen::MatrixXd::Zero(w1.rows(), w1.cols());
    for (Eigen::Index j = 0; j < B; ++j)
      for (auto idx : in.grid_idx[static_cast<std::size_t>(j)])
        g.w1.col(idx) += dz1.col(j);
    return g;
  }

  void save(const std::string& path) const {
    nlohmann::json j;
    j["format_version"] = kModelFormatVersion;
    j["spec"] = {{"grid_dim", spec_.grid_dim},
                 {"fusion_dim", spec_.fusion_dim},
                 {"hidden1", spec_.hidden1},
                 {"hidden2", spec_.hidden2},
                 {"hidden3", spec_.hidden3},
                 {"fusion_hidden", spec_.fusion_hidden},
                 {"actions", spec_.actions}};
    j["layers"] = nlohmann::json::array();
    auto dump = [&j](const char* name, const Eigen::MatrixXd& w,
                     const Eigen::VectorXd& b) {
      std::vector<double> flat(static_cast<std::size_t>(w.size()));
      // Row-major serialization regardless of in-memory layout.
      std::size_t k = 0;
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index jc = 0; jc < w.cols(); ++jc) flat[k++] = w(i, jc);
      j["layers"].push_back(
          {{"name", name},
           {"rows", w.rows()},
           {"cols", w.cols()},
           {"w", flat},
           {"b", std::vector<double>(b.data(), b.data() + b.size())}});
    };
    dump("grid1", w1, b1);
    dump("grid2", w2, b2);
    dump("grid3", w3, b3);
    dump("fusion", w4, b4);
    dump("head", w5, b5);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump();
    out << "\n";
  }

  static QNetwork load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ModelIncompatibleError(std::string("model file is not JSON: ") +
                                   e.what());
    }
    try {
      if (j.at("format_version").get<int>() != kModelFormatVersion)
        throw ModelIncompatibleError(
            "unsupported model format_version " +
            j.at("format_version").dump());
      NetworkSpec spec;
      const auto& js = j.at("spec");
      spec.grid_dim = js.at("grid_dim").get<int>();
      spec.fusion_dim = js.at("fusion_dim").get<int>();
      spec.hidden1 = js.at("hidden1").get<int>();
      spec.hidden2 = js.at("hidden2").get<int>();
      spec.hidden3 = js.at("hidden3").get<int>();
      spec.fusion_hidden = js.at("fusion_hidden").get<int>();
      spec.actions = js.at("actions").get<int>();
      QNetwork net(spec);
      const auto& layers = j.at("layers");
      if (layers.size() != 5)
        throw ModelIncompatibleError("expected 5 layers, got " +
                                     std::to_string(layers.size()));
      auto read = [](const nlohmann::json& jl, Eigen::MatrixXd& w,
                     Eigen::VectorXd& b) {
        const auto rows = jl.at("rows").get<Eigen::Index>();
        const auto cols = jl.at("cols").get<Eigen::Index>();
        if (rows != w.rows() || cols != w.cols())
          throw ModelIncompatibleError(
              "layer '" + jl.at("name").get<std::string>() +
              "' has shape " + std::to_string(rows) + "x" +
              std::to_string(cols) + ", expected " +
              std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
        const auto& flat = jl.at("w");
        if (static_cast<Eigen::Index>(flat.size()) != rows * cols)
          throw ModelIncompatibleError("weight array size mismatch");
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < rows; ++i)
          for (Eigen::Index jc = 0; jc < cols; ++jc)
            w(i, jc) = flat[k++].get<double>();
        const auto& jb = jl.at("b");
        if (static_cast<Eigen::Index>(jb.size()) != b.size())
          throw ModelIncompatibleError("bias array size mismatch");
        for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = jb[i].get<double>();
      };
      read(layers[0], net.w1, net.b1);
      read(layers[1], net.w2, net.b2);
      read(layers[2], net.w3, net.b3);
      read(layers[3], net.w4, net.b4);
      read(layers[4], net.w5, net.b5);
      return net;
    } catch (const ModelIncompatibleError&) {
      throw;
    } catch (const std::exception& e) {
      throw ModelIncompatibleError(std::string("malformed model file: ") +
                                   e.what());
    }
  }

  Eigen::MatrixXd w1, w2, w3, w4, w5;
  Eigen::VectorXd b1, b2, b3, b4, b5;

private:
  void allocate() {
    w1.setZero(spec_.hidden1, spec_.grid_dim);
    b1.setZero(spec_.hidden1);
    w2.setZero(spec_.hidden2, spec_.hidden1);
    b2.setZero(spec_.hidden2);
    w3.setZero(spec_.hidden3, spec_.hidden2);
    b3.setZero(spec_.hidden3);
    w4.setZero(spec_.fusion_hidden, spec_.hidden3 + spec_.fusion_dim);
    b4.setZero(spec_.fusion_hidden);
    w5.setZero(spec_.actions, spec_.fusion_hidden);
    b5.setZero(spec_.actions);
  }

  NetworkSpec spec_;
};

/// Stochastic gradient descent with classical momentum and a global
/// gradient-norm clip.
class SgdMomentum {
public:
  SgdMomentum(double lr, double momentum, double clip)
      : lr_(lr), momentum_(momentum), clip_(clip) {}

  void apply(QNetwork& net, NetGrads& g) {
    if (vel_.w1.size() == 0) {
      vel_.w1 = Eigen::MatrixXd::Zero(net.w1.rows(), net.w1.cols());
      vel_.w2 = Eigen::MatrixXd::Zero(net.w2.rows(), net.w2.cols());
      vel_.w3 = Eigen::MatrixXd::Zero(net.w3.rows(), net.w3.cols());
      vel_.w4 = Eigen::MatrixXd::Zero(net.w4.rows(), net.w4.cols());
      vel_.w5 = Eigen::MatrixXd::Zero(net.w5.rows(), net.w5.cols());
      vel_.b1 = Eigen::VectorXd::Zero(net.b1.size());
      vel_.b2 = Eigen::VectorXd::Zero(net.b2.size());
      vel_.b3 = Eigen::VectorXd::Zero(net.b3.size());
      vel_.b4 = Eigen::VectorXd::Zero(net.b4.size());
      vel_.b5 = Eigen::VectorXd::Zero(net.b5.size());
    }
    double sq = g.w1.squaredNorm() + g.w2.squaredNorm() + g.w3.squaredNorm() +
                g.w4.squaredNorm() + g.w5.squaredNorm() + g.b1.squaredNorm() +
                g.b2.squaredNorm() + g.b3.squaredNorm() + g.b4.squaredNorm() +
                g.b5.squaredNorm();
    const double norm = std::sqrt(sq);
    last_norm_ = norm;
    if (norm > clip_ && norm > 0.0) {
      const double scale = clip_ / norm;
      g.w1 *= scale; g.w2 *= scale; g.w3 *= scale; g.w4 *= scale; g.w5 *= scale;
      g.b1 *= scale; g.b2 *= scale; g.b3 *= scale; g.b4 *= scale; g.b5 *= scale;
    }
    auto upd = [this](auto& vel, auto& w, const auto& grad) {
      vel = momentum_ * vel + grad;
      w -= lr_ * vel;
    };
    upd(vel_.w1, net.w1, g.w1); upd(vel_.b1, net.b1, g.b1);
    upd(vel_.w2, net.w2, g.w2); upd(vel_.b2, net.b2, g.b2);
    upd(vel_.w3, net.w3, g.w3); upd(vel_.b3, net.b3, g.b3);
    upd(vel_.w4, net.w4, g.w4); upd(vel_.b4, net.b4, g.b4);
    upd(vel_.w5, net.w5, g.w5); upd(vel_.b5, net.b5, g.b5);
  }

  double last_norm() const { return last_norm_; }

private:
  double lr_, momentum_, clip_;
  double last_norm_ = 0.0;
  NetGrads vel_;
};

} // namespace vve
