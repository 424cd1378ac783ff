// Command-line interface: train and evaluate 2D-to-3D pose lifters, generate
// synthetic datasets, and score pose likelihoods. All outputs are CSV or
// binary checkpoints; every output directory gets a run manifest.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "poselift/data.hpp"
#include "poselift/metrics.hpp"
#include "poselift/trainer.hpp"

namespace fs = std::filesystem;
using namespace poselift;

namespace {

// Files created by the current command; removed if it fails partway.
std::vector<std::string> g_created;

std::ofstream create_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot create output file: " + path);
  g_created.push_back(path);
  return out;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return 0;
  std::uint64_t h = kFnvOffset;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= (unsigned char)buf[i];
      h *= 0x100000001b3ull;
    }
    if (in.gcount() < std::streamsize(sizeof(buf))) break;
  }
  return h;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const TrainConfig& cfg, const std::vector<std::string>& inputs) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = cfg;
  j["seed"] = cfg.seed;
  auto& in = j["inputs"] = nlohmann::json::array();
  for (const auto& p : inputs) {
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", (unsigned long long)hash_file(p));
    in.push_back({{"path", p}, {"fnv1a", std::string(hex)}});
  }
  auto now = std::chrono::system_clock::now().time_since_epoch();
  j["timestamp_unix"] = std::chrono::duration_cast<std::chrono::seconds>(now).count();
  std::ofstream out = create_output(out_dir + "/manifest.json");
  out << j.dump(2) << "\n";
}

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::string data_path;
  std::string skeleton_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int stride = 1;
  bool no_pca = false, no_elevation = false, no_bone = false, no_nf = false;
};

TrainConfig resolve_config(const CommonOpts& o) {
  TrainConfig cfg;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw std::runtime_error("cannot open config: " + o.config_path);
    nlohmann::json j;
    in >> j;
    cfg = j.get<TrainConfig>();
  }
  if (o.seed_set) cfg.seed = o.seed;  // flags override the file
  if (o.no_pca) cfg.use_pca = false;
  if (o.no_elevation) cfg.use_elevation = false;
  if (o.no_bone) cfg.use_bone = false;
  if (o.no_nf) cfg.use_nf = false;
  return cfg;
}

SkeletonSpec resolve_skeleton(const CommonOpts& o) {
  return o.skeleton_path.empty() ? h36m_skeleton() : load_skeleton(o.skeleton_path);
}

void add_common(CLI::App* cmd, CommonOpts& o, bool needs_data) {
  cmd->add_option("--config", o.config_path, "JSON config file (TrainConfig schema)");
  cmd->add_option("--out-dir", o.out_dir, "output directory");
  cmd->add_option("--skeleton", o.skeleton_path, "skeleton JSON (default: 17-joint)");
  auto* s = cmd->add_option("--seed", o.seed, "RNG seed (overrides config)");
  cmd->callback([&o, s]() { o.seed_set = s->count() > 0; });
  cmd->add_option("--stride", o.stride, "keep every k-th pose");
  cmd->add_flag("--no-pca", o.no_pca, "flow on raw 2D instead of the PCA subspace");
  cmd->add_flag("--no-elevation", o.no_elevation, "uniform elevation sampler ablation");
  cmd->add_flag("--no-bone", o.no_bone, "disable the bone-length prior");
  cmd->add_flag("--no-nf", o.no_nf, "disable the flow likelihood term");
  if (needs_data)
    cmd->add_option("--data", o.data_path, "keypoint CSV")->required();
}

Model train_model(const CommonOpts& o, const TrainConfig& cfg, const SkeletonSpec& skel,
                  std::ostream* metrics) {
  PoseDataset ds = load_keypoints(o.data_path, skel, o.stride);
  Mat<float> x = normalize_dataset(ds).cast<float>();
  if (x.rows() < 2 * cfg.batch_size)
    throw std::runtime_error("dataset too small: " + std::to_string(x.rows()) +
                             " normalized poses for batch size " +
                             std::to_string(cfg.batch_size));
  Model m = init_model(cfg, skel);
  // bone prior from the generator template when using the default skeleton
  if (o.skeleton_path.empty() && skel.joints == 17 && !cfg.self_calibrate_bone_prior) {
    Eigen::Matrix3Xd tpl = h36m_template();
    Eigen::VectorXd lengths(skel.bones.size());
    for (std::size_t k = 0; k < skel.bones.size(); ++k)
      lengths[Eigen::Index(k)] =
          (tpl.col(skel.bones[k].second) - tpl.col(skel.bones[k].first)).norm();
    m.prior = bone_prior_from_lengths<float>(lengths, float(cfg.sigma_b));
  }
  TrainLog log = train(m, x, metrics);
  if (log.halted) throw std::runtime_error("training halted: " + log.halt_reason);
  return m;
}

/// Paired (normalized 2D, mm-scale root-centered 3D gt) for evaluation.
void eval_pairs(const PoseDataset& ds, Mat<float>* x2d, std::vector<Vector>* gt) {
  if (!ds.has_3d()) throw std::runtime_error("evaluation data has no 3D ground truth");
  std::vector<Eigen::Index> kept;
  *x2d = normalize_dataset(ds, nullptr, &kept).cast<float>();
  gt->clear();
  for (Eigen::Index i : kept) {
    Vector y = center_root(ds.poses3d.row(i).transpose(), ds.skel);
    gt->push_back(1000.0 * y);  // meters -> mm
  }
}

EvalReport evaluate_model(const Model& m, const Mat<float>& x2d,
                          const std::vector<Vector>& gt) {
  Mat<float> pred = predict_3d(m, x2d);
  std::vector<Vector> pv;
  for (Eigen::Index i = 0; i < pred.rows(); ++i)
    pv.push_back(pred.row(i).transpose().cast<double>());
  return evaluate_poses(pv, gt);
}

int cmd_synth(const CommonOpts& o, int count, double noise, double depth) {
  TrainConfig cfg = resolve_config(o);
  SynthConfig sc;
  sc.skel = resolve_skeleton(o);
  if (sc.skel.joints != 17)
    throw std::runtime_error("synth supports the default 17-joint skeleton only");
  sc.count = count;
  sc.noise_std = noise;
  sc.depth = depth;
  Rng rng(derive_seed(cfg.seed, 10));
  PoseDataset ds = generate_synthetic(sc, rng);
  save_keypoints(ds, o.out_dir + "/dataset.csv");
  g_created.push_back(o.out_dir + "/dataset.csv");
  save_skeleton(sc.skel, o.out_dir + "/skeleton.json");
  g_created.push_back(o.out_dir + "/skeleton.json");
  write_manifest(o.out_dir, "synth", cfg, {});
  std::cout << "wrote " << ds.size() << " poses to " << o.out_dir << "/dataset.csv\n";
  return 0;
}

int cmd_pretrain_flow(const CommonOpts& o) {
  TrainConfig cfg = resolve_config(o);
  SkeletonSpec skel = resolve_skeleton(o);
  PoseDataset ds = load_keypoints(o.data_path, skel, o.stride);
  Mat<float> x = normalize_dataset(ds).cast<float>();
  Model m = init_model(cfg, skel);
  Mat<float> tr, val;
  split_train_val(x, cfg, &tr, &val);
  TrainLog log;
  std::vector<double> curve = pretrain_flow(m, tr, val, &log);
  if (log.halted) throw std::runtime_error(log.halt_reason);
  m.stats = infer_elevation_stats(m, tr);
  save_checkpoint(m, o.out_dir + "/flow_checkpoint.bin");
  g_created.push_back(o.out_dir + "/flow_checkpoint.bin");
  write_manifest(o.out_dir, "pretrain-flow", cfg, {o.data_path});
  std::cout << "flow pretrained, " << curve.size() << " epochs, final val NLL "
            << (curve.empty() ? 0.0 : curve.back()) << "\n";
  return 0;
}

int cmd_train(const CommonOpts& o) {
  TrainConfig cfg = resolve_config(o);
  SkeletonSpec skel = resolve_skeleton(o);
  std::ofstream metrics = create_output(o.out_dir + "/metrics.csv");
  Model m = train_model(o, cfg, skel, &metrics);
  save_checkpoint(m, o.out_dir + "/checkpoint.bin");
  g_created.push_back(o.out_dir + "/checkpoint.bin");
  write_manifest(o.out_dir, "train", cfg, {o.data_path});
  std::cout << "trained; elevation mu " << m.stats.mu << " sigma " << m.stats.sigma
            << "; checkpoint in " << o.out_dir << "\n";
  return 0;
}

int cmd_evaluate(const CommonOpts& o, const std::string& ckpt) {
  Model m = load_checkpoint(ckpt);
  PoseDataset ds = load_keypoints(o.data_path, m.skel, o.stride);
  Mat<float> x2d;
  std::vector<Vector> gt;
  eval_pairs(ds, &x2d, &gt);
  EvalReport r = evaluate_model(m, x2d, gt);
  save_eval_report(r, o.out_dir + "/report.csv");
  g_created.push_back(o.out_dir + "/report.csv");
  write_manifest(o.out_dir, "evaluate", m.cfg, {o.data_path, ckpt});
  std::cout << format_eval_report(r) << "\n";
  return 0;
}

int cmd_score(const CommonOpts& o, const std::string& ckpt, int rotations) {
  Model m = load_checkpoint(ckpt);
  PoseDataset ds = load_keypoints(o.data_path, m.skel, o.stride);
  Mat<float> x = normalize_dataset(ds).cast<float>();
  TrainConfig cfg = m.cfg;
  Rng rng(derive_seed(cfg.seed, 20));
  std::ofstream out = create_output(o.out_dir + "/scores.csv");
  out.precision(10);
  out << "pose,nll\n";
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out << i << ',' << score_likelihood(m, Vec<float>(x.row(i).transpose()), rng, rotations)
        << '\n';
  write_manifest(o.out_dir, "score", cfg, {o.data_path, ckpt});
  std::cout << "scored " << x.rows() << " poses -> " << o.out_dir << "/scores.csv\n";
  return 0;
}

int cmd_sweep_bases(const CommonOpts& o, std::vector<int> bases) {
  TrainConfig base_cfg = resolve_config(o);
  SkeletonSpec skel = resolve_skeleton(o);
  PoseDataset ds = load_keypoints(o.data_path, skel, o.stride);
  Mat<float> x2d;
  std::vector<Vector> gt;
  eval_pairs(ds, &x2d, &gt);
  std::ofstream out = create_output(o.out_dir + "/sweep_bases.csv");
  out.precision(10);
  out << "bases,pa_mpjpe_mm\n";
  for (int mdim : bases) {
    TrainConfig cfg = base_cfg;
    cfg.bases = mdim;
    Model m = train_model(o, cfg, skel, nullptr);
    EvalReport r = evaluate_model(m, x2d, gt);
    out << mdim << ',' << r.pa_mpjpe << '\n';
    std::cout << "M=" << mdim << " PA-MPJPE " << r.pa_mpjpe << " mm\n";
  }
  write_manifest(o.out_dir, "sweep-bases", base_cfg, {o.data_path});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("POSELIFT_THREADS"))
    Eigen::setNbThreads(std::max(1, std::atoi(threads)));

  CLI::App app{"2D-to-3D pose lifting: unsupervised training via reprojection likelihood"};
  app.require_subcommand(1);

  CommonOpts o;
  int synth_count = 1000;
  double synth_noise = 0.0;
  double synth_depth = SynthConfig{}.depth;
  std::string ckpt;
  int rotations = 100;
  std::vector<int> bases = {15, 20, 26, 32};

  auto* synth = app.add_subcommand("synth", "generate a synthetic pose dataset");
  add_common(synth, o, false);
  synth->add_option("--count", synth_count, "number of poses");
  synth->add_option("--noise", synth_noise, "2D noise std (normalized units)");
  synth->add_option("--depth", synth_depth, "camera distance to the subject root");

  auto* pre = app.add_subcommand("pretrain-flow", "pretrain the density model");
  add_common(pre, o, true);

  auto* tr = app.add_subcommand("train", "pretrain the flow, then train the lifter");
  add_common(tr, o, true);

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint against 3D ground truth");
  add_common(ev, o, true);
  ev->add_option("--checkpoint", ckpt, "model checkpoint")->required();

  auto* sc = app.add_subcommand("score", "per-pose reprojection NLL");
  add_common(sc, o, true);
  sc->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  sc->add_option("--rotations", rotations, "virtual cameras per pose");

  auto* sw = app.add_subcommand("sweep-bases", "train/evaluate over several PCA sizes");
  add_common(sw, o, true);
  sw->add_option("--bases", bases, "PCA basis counts to sweep");

  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(o.out_dir);
    if (synth->parsed()) return cmd_synth(o, synth_count, synth_noise, synth_depth);
    if (pre->parsed()) return cmd_pretrain_flow(o);
    if (tr->parsed()) return cmd_train(o);
    if (ev->parsed()) return cmd_evaluate(o, ckpt);
    if (sc->parsed()) return cmd_score(o, ckpt, rotations);
    if (sw->parsed()) return cmd_sweep_bases(o, bases);
  } catch (const std::exception& e) {
    for (const auto& p : g_created) std::remove(p.c_str());
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
