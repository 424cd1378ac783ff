#ifndef POSELIFT_TRAINER_HPP_
#define POSELIFT_TRAINER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "poselift/adam.hpp"
#include "poselift/camera.hpp"
#include "poselift/data.hpp"
#include "poselift/flow.hpp"
#include "poselift/lifter.hpp"
#include "poselift/losses.hpp"
#include "poselift/pca.hpp"
#include "poselift/rng.hpp"

namespace poselift {

struct TrainConfig {
  std::uint64_t seed = 0;
  int batch_size = 256;
  int epochs = 100;
  int flow_epochs = 35;
  double flow_lr = 1e-4;            // staircase /10 at epochs 10, 20, 30
  double lifter_lr = 2e-4;          // exponential decay per epoch
  double lifter_lr_decay = 0.95;
  double weight_decay = 1e-5;
  bool decoupled_decay = false;
  double grad_clip_norm = 1000.0;  // spike guard only; 0 disables clipping
  double flow_noise = 0.01;   // fresh per-batch noise during flow pretraining
  double nf_clamp = 2000.0;   // absolute per-sample NLL cap in the objective
  double nf_trim = 0.1;       // winsorized per-batch NLL fraction
  int bases = 26;
  int flow_blocks = 8;
  int flow_hidden = 1024;
  int lifter_width = 1024;
  double sigma_b = 0.1;
  double depth = 10.0;
  double sigma_floor = kSigmaFloor;
  double bone_weight = 50.0;
  double val_fraction = 0.05;
  bool use_pca = true;
  bool use_elevation = true;
  bool use_bone = true;
  bool use_nf = true;
  bool stop_grad_target = false;
  bool grad_through_correction = true;
  bool self_calibrate_bone_prior = false;  // estimate b-bar from each batch's lift
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"flow_epochs", c.flow_epochs},
                     {"flow_lr", c.flow_lr},
                     {"lifter_lr", c.lifter_lr},
                     {"lifter_lr_decay", c.lifter_lr_decay},
                     {"weight_decay", c.weight_decay},
                     {"decoupled_decay", c.decoupled_decay},
                     {"grad_clip_norm", c.grad_clip_norm},
                     {"flow_noise", c.flow_noise},
                     {"nf_clamp", c.nf_clamp},
                     {"nf_trim", c.nf_trim},
                     {"bases", c.bases},
                     {"flow_blocks", c.flow_blocks},
                     {"flow_hidden", c.flow_hidden},
                     {"lifter_width", c.lifter_width},
                     {"sigma_b", c.sigma_b},
                     {"depth", c.depth},
                     {"sigma_floor", c.sigma_floor},
                     {"bone_weight", c.bone_weight},
                     {"val_fraction", c.val_fraction},
                     {"use_pca", c.use_pca},
                     {"use_elevation", c.use_elevation},
                     {"use_bone", c.use_bone},
                     {"use_nf", c.use_nf},
                     {"stop_grad_target", c.stop_grad_target},
                     {"grad_through_correction", c.grad_through_correction},
                     {"self_calibrate_bone_prior", c.self_calibrate_bone_prior}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.seed = j.value("seed", d.seed);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.flow_epochs = j.value("flow_epochs", d.flow_epochs);
  c.flow_lr = j.value("flow_lr", d.flow_lr);
  c.lifter_lr = j.value("lifter_lr", d.lifter_lr);
  c.lifter_lr_decay = j.value("lifter_lr_decay", d.lifter_lr_decay);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.decoupled_decay = j.value("decoupled_decay", d.decoupled_decay);
  c.grad_clip_norm = j.value("grad_clip_norm", d.grad_clip_norm);
  c.flow_noise = j.value("flow_noise", d.flow_noise);
  c.nf_clamp = j.value("nf_clamp", d.nf_clamp);
  c.nf_trim = j.value("nf_trim", d.nf_trim);
  c.bases = j.value("bases", d.bases);
  c.flow_blocks = j.value("flow_blocks", d.flow_blocks);
  c.flow_hidden = j.value("flow_hidden", d.flow_hidden);
  c.lifter_width = j.value("lifter_width", d.lifter_width);
  c.sigma_b = j.value("sigma_b", d.sigma_b);
  c.depth = j.value("depth", d.depth);
  c.sigma_floor = j.value("sigma_floor", d.sigma_floor);
  c.bone_weight = j.value("bone_weight", d.bone_weight);
  c.val_fraction = j.value("val_fraction", d.val_fraction);
  c.use_pca = j.value("use_pca", d.use_pca);
  c.use_elevation = j.value("use_elevation", d.use_elevation);
  c.use_bone = j.value("use_bone", d.use_bone);
  c.use_nf = j.value("use_nf", d.use_nf);
  c.stop_grad_target = j.value("stop_grad_target", d.stop_grad_target);
  c.grad_through_correction = j.value("grad_through_correction", d.grad_through_correction);
  c.self_calibrate_bone_prior =
      j.value("self_calibrate_bone_prior", d.self_calibrate_bone_prior);
}

/// Flow learning rate at a given epoch: staircase /10 at epochs 10, 20, 30.
inline double flow_lr_at(double base, int epoch) {
  int drops = (epoch >= 30) ? 3 : (epoch >= 20) ? 2 : (epoch >= 10) ? 1 : 0;
  return base / std::pow(10.0, drops);
}

/// Lifter learning rate at a given epoch: base * decay^epoch.
inline double lifter_lr_at(double base, double decay, int epoch) {
  return base * std::pow(decay, epoch);
}

/// Everything needed for inference, bundled for checkpointing.
struct Model {
  SkeletonSpec skel;
  TrainConfig cfg;
  LifterNet<float> lifter;
  CouplingFlow<float> flow;
  PcaModel<float> pca;
  BonePrior<float> prior;
  ElevationStats stats;
  std::string train_rng_state;  // resume point for the camera stream
};

inline Model init_model(const TrainConfig& cfg, const SkeletonSpec& skel) {
  skel.validate();
  if (cfg.batch_size < 2) throw std::invalid_argument("train: batch size must be >= 2");
  Model m;
  m.skel = skel;
  m.cfg = cfg;
  std::mt19937_64 wrng(derive_seed(cfg.seed, 0));
  m.lifter = LifterNet<float>(skel.joints, cfg.lifter_width, wrng);
  int flow_dim = cfg.use_pca ? cfg.bases : 2 * skel.joints;
  m.flow = CouplingFlow<float>(flow_dim, cfg.flow_blocks, cfg.flow_hidden, wrng);
  m.prior.mean = Vec<float>::Ones(Eigen::Index(skel.bones.size()));
  m.prior.sigma = float(cfg.sigma_b);
  return m;
}

inline ObjectiveConfig<float> objective_config(const TrainConfig& cfg) {
  ObjectiveConfig<float> oc;
  oc.depth = float(cfg.depth);
  oc.sigma_floor = float(cfg.sigma_floor);
  oc.bone_weight = float(cfg.bone_weight);
  oc.nf_clamp = float(cfg.nf_clamp);
  oc.nf_trim = float(cfg.nf_trim);
  oc.use_pca = cfg.use_pca;
  oc.use_elevation = cfg.use_elevation;
  oc.use_bone = cfg.use_bone;
  oc.use_nf = cfg.use_nf;
  oc.stop_grad_target = cfg.stop_grad_target;
  oc.grad_through_correction = cfg.grad_through_correction;
  return oc;
}

// ---------------------------------------------------------------------------
// Checkpoint: single binary file.
// Layout: magic "PLCK" | u32 version | u64 json_len | json bytes |
//         u32 tensor_count | per tensor: u32 name_len, name, u32 rows,
//         u32 cols, rows*cols little-endian f32 (column-major).
// The JSON carries skeleton, config, flow permutations, elevation stats,
// prior sigma, total PCA variance, and RNG state.
// ---------------------------------------------------------------------------

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& o, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  o.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

inline void write_f32(std::ostream& o, float x) {
  std::uint32_t v;
  std::memcpy(&v, &x, 4);
  write_u32(o, v);
}

inline float read_f32(std::istream& in) {
  std::uint32_t v = read_u32(in);
  float x;
  std::memcpy(&x, &v, 4);
  return x;
}

inline void write_tensor(std::ostream& o, const std::string& name, const Mat<float>& m) {
  write_u32(o, std::uint32_t(name.size()));
  o.write(name.data(), std::streamsize(name.size()));
  write_u32(o, std::uint32_t(m.rows()));
  write_u32(o, std::uint32_t(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) write_f32(o, m(i, j));
}

}  // namespace detail

inline std::vector<Param<float>*> all_params(Model& m) {
  std::vector<Param<float>*> ps;
  m.lifter.collect(ps);
  m.flow.collect(ps);
  return ps;
}

inline void save_checkpoint(Model& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  nlohmann::json j;
  j["config"] = m.cfg;
  j["skeleton"] = {{"joint_names", m.skel.joint_names},
                   {"root", m.skel.root},
                   {"head", m.skel.head}};
  auto& bones = j["skeleton"]["bones"] = nlohmann::json::array();
  for (auto [p, c] : m.skel.bones) bones.push_back({p, c});
  auto& perms = j["flow_perms"] = nlohmann::json::array();
  for (const auto& b : m.flow.blocks) perms.push_back(b.perm);
  j["stats"] = {{"mu", m.stats.mu}, {"sigma", m.stats.sigma}, {"batch", m.stats.batch}};
  j["prior_sigma"] = double(m.prior.sigma);
  j["pca_total_variance"] = double(m.pca.total_variance);
  j["train_rng_state"] = m.train_rng_state;
  std::string blob = j.dump();

  out.write("PLCK", 4);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, std::uint32_t(blob.size()));
  out.write(blob.data(), std::streamsize(blob.size()));

  std::vector<Param<float>*> ps = all_params(m);
  std::uint32_t extra = 4;  // pca mean/basis/variances + prior mean
  detail::write_u32(out, std::uint32_t(ps.size()) + extra);
  for (Param<float>* p : ps) detail::write_tensor(out, p->name, p->value);
  detail::write_tensor(out, "pca.mean", m.pca.mean);
  detail::write_tensor(out, "pca.basis", m.pca.basis);
  detail::write_tensor(out, "pca.variances", Mat<float>(m.pca.variances));
  detail::write_tensor(out, "prior.mean", Mat<float>(m.prior.mean));
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "PLCK")
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  std::uint32_t blob_len = detail::read_u32(in);
  std::string blob(blob_len, '\0');
  in.read(blob.data(), blob_len);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  nlohmann::json j = nlohmann::json::parse(blob);

  SkeletonSpec skel;
  skel.joint_names = j["skeleton"]["joint_names"].get<std::vector<std::string>>();
  skel.joints = int(skel.joint_names.size());
  skel.root = j["skeleton"]["root"].get<int>();
  skel.head = j["skeleton"]["head"].get<int>();
  for (const auto& b : j["skeleton"]["bones"])
    skel.bones.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
  skel.validate();

  Model m = init_model(j["config"].get<TrainConfig>(), skel);
  auto perms = j["flow_perms"].get<std::vector<std::vector<int>>>();
  if (perms.size() != m.flow.blocks.size())
    throw std::runtime_error("checkpoint: flow block count mismatch");
  for (std::size_t i = 0; i < perms.size(); ++i) {
    m.flow.blocks[i].perm = perms[i];
    m.flow.blocks[i].build_inverse();
  }
  m.stats.mu = j["stats"]["mu"].get<double>();
  m.stats.sigma = j["stats"]["sigma"].get<double>();
  m.stats.batch = j["stats"]["batch"].get<int>();
  m.prior.sigma = float(j["prior_sigma"].get<double>());
  m.pca.total_variance = float(j["pca_total_variance"].get<double>());
  m.train_rng_state = j.value("train_rng_state", std::string());

  std::uint32_t count = detail::read_u32(in);
  std::vector<Param<float>*> ps = all_params(m);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint32_t name_len = detail::read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t rows = detail::read_u32(in);
    std::uint32_t cols = detail::read_u32(in);
    Mat<float> val(rows, cols);
    for (std::uint32_t c = 0; c < cols; ++c)
      for (std::uint32_t r = 0; r < rows; ++r) val(r, c) = detail::read_f32(in);
    if (!in) throw std::runtime_error("checkpoint: truncated tensor '" + name + "'");
    if (name == "pca.mean") {
      m.pca.mean = val;
    } else if (name == "pca.basis") {
      m.pca.basis = val;
    } else if (name == "pca.variances") {
      m.pca.variances = Vec<float>(val.col(0));
    } else if (name == "prior.mean") {
      m.prior.mean = Vec<float>(val.col(0));
    } else {
      bool found = false;
      for (Param<float>* p : ps)
        if (p->name == name) {
          p->value = val;
          found = true;
          break;
        }
      if (!found) throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainLog {
  std::vector<double> flow_val_nll;   // per pretraining epoch
  std::vector<double> lifter_val;     // per epoch, L_NF + w * L_bone on val
  int steps = 0;
  int best_epoch = -1;
  double best_val = 0;
  bool halted = false;
  std::string halt_reason;
};

namespace detail {

inline std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index(0));
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  return idx;
}

inline Mat<float> gather_rows(const Mat<float>& x, const std::vector<Eigen::Index>& idx,
                              std::size_t start, std::size_t count) {
  Mat<float> out(Eigen::Index(count), x.cols());
  for (std::size_t k = 0; k < count; ++k) out.row(Eigen::Index(k)) = x.row(idx[start + k]);
  return out;
}

}  // namespace detail

/// Splits normalized poses into train/validation parts (seeded shuffle; the
/// last `val_fraction` goes to validation).
inline void split_train_val(const Mat<float>& x, const TrainConfig& cfg, Mat<float>* train,
                            Mat<float>* val) {
  Rng rng(derive_seed(cfg.seed, 3));
  auto idx = detail::shuffled_indices(x.rows(), rng);
  Eigen::Index n_val = Eigen::Index(std::llround(cfg.val_fraction * double(x.rows())));
  n_val = std::min(std::max<Eigen::Index>(n_val, 0), x.rows() - 1);
  Eigen::Index n_train = x.rows() - n_val;
  *train = detail::gather_rows(x, idx, 0, std::size_t(n_train));
  *val = detail::gather_rows(x, idx, std::size_t(n_train), std::size_t(n_val));
}

/// Pretrains the flow on (PCA coefficients of) the normalized 2D poses by
/// maximum likelihood. Aborts on divergence, restoring the last epoch whose
/// validation NLL was finite. Returns per-epoch validation NLLs.
inline std::vector<double> pretrain_flow(Model& m, const Mat<float>& train,
                                         const Mat<float>& val, TrainLog* log = nullptr) {
  const TrainConfig& cfg = m.cfg;
  if (cfg.use_pca) m.pca = fit_pca<float>(train, cfg.bases);
  Mat<float> coeffs = cfg.use_pca ? to_subspace(train, m.pca) : train;
  Mat<float> val_coeffs = cfg.use_pca ? to_subspace(val, m.pca) : val;

  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  // Fresh per-batch noise smooths the learned density so it does not carve
  // razor-thin modes around the finite training set. The subspace basis is
  // orthonormal, so isotropic noise in image space stays isotropic here.
  Rng noise_rng(derive_seed(cfg.seed, 6));
  AdamState<float> opt;
  std::vector<double> curve;
  std::vector<Mat<float>> snapshot;
  auto take_snapshot = [&]() {
    snapshot.clear();
    std::vector<Param<float>*> ps;
    m.flow.collect(ps);
    for (auto* p : ps) snapshot.push_back(p->value);
  };
  auto restore_snapshot = [&]() {
    std::vector<Param<float>*> ps;
    m.flow.collect(ps);
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = snapshot[i];
  };
  take_snapshot();

  for (int epoch = 0; epoch < cfg.flow_epochs; ++epoch) {
    AdamConfig<float> ac;
    ac.lr = float(flow_lr_at(cfg.flow_lr, epoch));
    ac.weight_decay = float(cfg.weight_decay);
    ac.decoupled_decay = cfg.decoupled_decay;
    ac.grad_clip_norm = float(cfg.grad_clip_norm);
    auto idx = detail::shuffled_indices(coeffs.rows(), shuffle_rng);
    std::size_t nb = std::size_t(coeffs.rows()) / std::size_t(cfg.batch_size);
    bool diverged = false;
    for (std::size_t b = 0; b < nb; ++b) {
      Mat<float> batch =
          detail::gather_rows(coeffs, idx, b * std::size_t(cfg.batch_size),
                              std::size_t(cfg.batch_size));
      if (cfg.flow_noise > 0)
        for (Eigen::Index r = 0; r < batch.rows(); ++r)
          for (Eigen::Index c = 0; c < batch.cols(); ++c)
            batch(r, c) += float(noise_rng.normal(0.0, cfg.flow_noise));
      Tape<float> t;
      Bindings<float> bs;
      try {
        Val<float> loss = m.flow.nf_loss(t, &bs, t.constant(batch));
        t.backward(loss);
        adam_step(t, bs, opt, ac);
      } catch (const std::runtime_error&) {
        diverged = true;
        break;
      }
    }
    double val_nll = diverged
                         ? std::numeric_limits<double>::quiet_NaN()
                         : double(-m.flow.log_likelihood_plain(val_coeffs).mean());
    if (!std::isfinite(val_nll)) {
      restore_snapshot();
      if (log != nullptr) {
        log->halted = true;
        log->halt_reason = "flow pretraining diverged at epoch " + std::to_string(epoch);
      }
      break;
    }
    curve.push_back(val_nll);
    take_snapshot();
  }
  if (log != nullptr) log->flow_val_nll = curve;
  return curve;
}

/// Validation score used to pick the best checkpoint: L_NF + w * L_bone on
/// the held-out split (no 3D involved). The rotation stream is re-seeded
/// identically every epoch so scores are comparable.
inline double validation_score(Model& m, const Mat<float>& val) {
  if (val.rows() < 2) return std::numeric_limits<double>::quiet_NaN();
  Rng rng(derive_seed(m.cfg.seed, 4));
  ObjectiveConfig<float> oc = objective_config(m.cfg);
  LossReport<float> rep;
  Tape<float> t;
  build_total_loss<float>(t, nullptr, t.constant(val), m.lifter, m.flow, m.pca, m.prior,
                          m.skel, rng, oc, &rep);
  return double(rep.l_nf) + m.cfg.bone_weight * double(rep.l_bone);
}

/// Recomputes the inference-time elevation distribution over a pose set.
inline ElevationStats infer_elevation_stats(const Model& m, const Mat<float>& x) {
  LiftPlain<float> l = lift_plain(m.lifter, x, float(m.cfg.depth));
  ElevationStats s;
  s.batch = int(x.rows());
  s.mu = double(l.e.mean());
  double var = 0;
  for (Eigen::Index i = 0; i < l.e.size(); ++i) {
    double d = double(l.e[i]) - s.mu;
    var += d * d;
  }
  var /= std::max<double>(1.0, double(l.e.size() - 1));
  s.sigma = std::max(std::sqrt(var), m.cfg.sigma_floor);
  return s;
}

/// Full lifter training loop. `metrics` (if given) receives one CSV row per
/// step: step,epoch,lr,L_NF,L_bone,L_3D,L_def,L_2D,total. Keeps the best
/// checkpoint by validation score; on a non-finite loss the run halts and
/// the model keeps the last finite state.
inline TrainLog train_lifter(Model& m, const Mat<float>& train, const Mat<float>& val,
                             std::ostream* metrics = nullptr) {
  const TrainConfig& cfg = m.cfg;
  TrainLog log;
  if (metrics != nullptr)
    *metrics << "step,epoch,lr,L_NF,L_bone,L_3D,L_def,L_2D,total\n";

  Rng shuffle_rng(derive_seed(cfg.seed, 5));
  Rng camera_rng(derive_seed(cfg.seed, 1));
  ObjectiveConfig<float> oc = objective_config(cfg);
  AdamState<float> opt;
  std::vector<Mat<float>> best;
  auto snap = [&](std::vector<Mat<float>>& dst) {
    dst.clear();
    for (auto* p : all_params(m)) dst.push_back(p->value);
  };
  auto restore = [&](const std::vector<Mat<float>>& src) {
    auto ps = all_params(m);
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = src[i];
  };
  snap(best);
  log.best_val = validation_score(m, val);
  log.best_epoch = -1;

  std::vector<Mat<float>> last_good;
  snap(last_good);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    AdamConfig<float> ac;
    ac.lr = float(lifter_lr_at(cfg.lifter_lr, cfg.lifter_lr_decay, epoch));
    ac.weight_decay = float(cfg.weight_decay);
    ac.decoupled_decay = cfg.decoupled_decay;
    ac.grad_clip_norm = float(cfg.grad_clip_norm);
    auto idx = detail::shuffled_indices(train.rows(), shuffle_rng);
    std::size_t nb = std::size_t(train.rows()) / std::size_t(cfg.batch_size);
    for (std::size_t b = 0; b < nb; ++b) {
      Mat<float> batch = detail::gather_rows(train, idx, b * std::size_t(cfg.batch_size),
                                             std::size_t(cfg.batch_size));
      if (cfg.self_calibrate_bone_prior) {
        LiftPlain<float> l = lift_plain(m.lifter, batch, float(cfg.depth));
        m.prior = estimate_bone_prior<float>(l.y, m.skel, float(cfg.sigma_b));
      }
      LossReport<float> rep;
      try {
        Tape<float> t;
        Bindings<float> bs;
        Val<float> loss = build_total_loss<float>(t, &bs, t.constant(batch), m.lifter,
                                                  m.flow, m.pca, m.prior, m.skel,
                                                  camera_rng, oc, &rep);
        if (!std::isfinite(rep.total)) throw std::runtime_error("non-finite loss");
        snap(last_good);  // these params produced a finite forward pass
        t.backward(loss);
        adam_step(t, bs, opt, ac);
      } catch (const std::runtime_error& e) {
        restore(last_good);
        log.halted = true;
        std::ostringstream os;
        os << "halt at epoch " << epoch << " step " << log.steps << ": " << e.what()
           << "; batch indices";
        for (std::size_t k = 0; k < std::size_t(cfg.batch_size) && k < 16; ++k)
          os << " " << idx[b * std::size_t(cfg.batch_size) + k];
        log.halt_reason = os.str();
        return log;
      }
      if (metrics != nullptr)
        *metrics << log.steps << ',' << epoch << ',' << ac.lr << ',' << rep.l_nf << ','
                 << rep.l_bone << ',' << rep.l_3d << ',' << rep.l_def << ',' << rep.l_2d
                 << ',' << rep.total << '\n';
      ++log.steps;
    }
    double v = validation_score(m, val);
    log.lifter_val.push_back(v);
    if (std::isfinite(v) && (log.best_epoch < 0 || v < log.best_val ||
                             !std::isfinite(log.best_val))) {
      log.best_val = v;
      log.best_epoch = epoch;
      snap(best);
    }
  }
  if (log.best_epoch >= 0) restore(best);
  m.stats = infer_elevation_stats(m, train);
  m.train_rng_state = camera_rng.save_state();
  return log;
}

/// End-to-end training from normalized 2D poses: split, pretrain the flow
/// (frozen afterwards), train the lifter.
inline TrainLog train(Model& m, const Mat<float>& x, std::ostream* metrics = nullptr) {
  Mat<float> tr, val;
  split_train_val(x, m.cfg, &tr, &val);
  TrainLog log;
  pretrain_flow(m, tr, val, &log);
  if (log.halted) return log;
  TrainLog lifted = train_lifter(m, tr, val, metrics);
  lifted.flow_val_nll = log.flow_val_nll;
  return lifted;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Lifts normalized 2D poses to root-centered 3D, one row per pose.
inline Mat<float> predict_3d(const Model& m, const Mat<float>& x) {
  LiftPlain<float> l = lift_plain(m.lifter, x, float(m.cfg.depth));
  Mat<float> out(l.y.rows(), l.y.cols());
  for (Eigen::Index i = 0; i < l.y.rows(); ++i) {
    Vector y = l.y.row(i).transpose().cast<double>();
    out.row(i) = center_root(y, m.skel).transpose().cast<float>();
  }
  return out;
}

/// The flat-pose baseline (zero depth offsets): every joint at depth D.
inline Mat<float> flat_baseline_3d(const SkeletonSpec& skel, const Mat<float>& x,
                                   double depth) {
  int J = skel.joints;
  Mat<float> out(x.rows(), 3 * J);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Vector w = Vector::Constant(J, depth);
    Vector y = unproject(x.row(i).transpose().cast<double>(), w);
    out.row(i) = center_root(y, skel).transpose().cast<float>();
  }
  return out;
}

/// Mean flow NLL of one normalized 2D pose over `n_rotations` virtual
/// cameras drawn from the stored elevation distribution.
inline double score_likelihood(const Model& m, const Vec<float>& x, Rng& rng,
                               int n_rotations = 100) {
  Mat<float> xm = x.transpose();
  LiftPlain<float> l = lift_plain(m.lifter, xm, float(m.cfg.depth));
  Vector y = center_root(l.y.row(0).transpose().cast<double>(), m.skel);
  int J = m.skel.joints;
  double acc = 0;
  for (int r = 0; r < n_rotations; ++r) {
    Matrix3 rot = sample_rotation_plain(double(l.e[0]), m.stats, rng);
    Vector y2 = apply_rotation(rot, y);
    for (int j = 0; j < J; ++j)
      y2[2 * J + j] = std::max(y2[2 * J + j] + m.cfg.depth, 0.1);
    Mat<float> x2 = project(y2).transpose().cast<float>();
    Mat<float> coeffs = m.cfg.use_pca ? to_subspace(x2, m.pca) : x2;
    acc += -double(m.flow.log_likelihood_plain(coeffs)(0));
  }
  return acc / double(n_rotations);
}

}  // namespace poselift

#endif  // POSELIFT_TRAINER_HPP_
