#ifndef POSELIFT_DATA_HPP_
#define POSELIFT_DATA_HPP_

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "poselift/geometry.hpp"
#include "poselift/rng.hpp"
#include "poselift/tensor.hpp"

namespace poselift {

struct DatasetMeta {
  std::string source;
  int stride = 1;
  int rejected = 0;          // poses dropped during ingestion / reprojection
  std::uint64_t checksum = 0;  // FNV-1a over the parsed float bytes
};

/// 2D keypoints (raw image pixels, one pose per row [u.., v..]) plus the
/// optional paired camera-frame 3D poses used only for evaluation.
struct PoseDataset {
  SkeletonSpec skel;
  Mat<double> poses2d;  // [N x 2J]
  Mat<double> poses3d;  // [N x 3J] or empty
  DatasetMeta meta;

  Eigen::Index size() const { return poses2d.rows(); }
  bool has_3d() const { return poses3d.rows() == poses2d.rows() && poses3d.rows() > 0; }
};

inline std::uint64_t fnv1a_accumulate(std::uint64_t h, double x) {
  unsigned char bytes[sizeof(double)];
  std::memcpy(bytes, &x, sizeof(double));
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;

namespace detail {

inline std::vector<double> parse_csv_row(const std::string& line, int lineno) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t comma = line.find(',', pos);
    std::string field = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
    std::size_t used = 0;
    double v;
    try {
      v = std::stod(field, &used);
    } catch (const std::exception&) {
      throw std::runtime_error("keypoint csv line " + std::to_string(lineno) +
                               ": cannot parse field '" + field + "'");
    }
    while (used < field.size() && std::isspace((unsigned char)field[used])) ++used;
    if (used != field.size())
      throw std::runtime_error("keypoint csv line " + std::to_string(lineno) +
                               ": trailing junk in field '" + field + "'");
    out.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace detail

/// Loads the canonical keypoint CSV: one pose per row, u_1..u_J,v_1..v_J and
/// optionally z_1..z_J depth columns (3D recovered by unprojection). An
/// optional header row is skipped. `file_joints` remaps file joint order to
/// the skeleton's order; empty means identity.
inline PoseDataset load_keypoints(const std::string& path, const SkeletonSpec& skel,
                                  int stride = 1,
                                  const std::vector<std::string>& file_joints = {}) {
  if (stride < 1) throw std::invalid_argument("load_keypoints: stride must be >= 1");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open keypoint file: " + path);
  int J = skel.joints;

  std::vector<int> remap(J);
  for (int j = 0; j < J; ++j) remap[j] = j;
  if (!file_joints.empty()) {
    if (int(file_joints.size()) != J)
      throw std::runtime_error("load_keypoints: joint remap has " +
                               std::to_string(file_joints.size()) + " names, skeleton has " +
                               std::to_string(J));
    for (int j = 0; j < J; ++j) {
      auto it = std::find(skel.joint_names.begin(), skel.joint_names.end(), file_joints[j]);
      if (it == skel.joint_names.end())
        throw std::runtime_error("load_keypoints: unknown joint name '" + file_joints[j] + "'");
      remap[j] = int(it - skel.joint_names.begin());
    }
  }

  std::vector<std::vector<double>> rows;
  bool with_z = false;
  std::string line;
  int lineno = 0;
  std::uint64_t checksum = kFnvOffset;
  int raw_index = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && line.find_first_not_of("0123456789+-.eE, \t\r") != std::string::npos)
      continue;  // header row
    std::vector<double> vals = detail::parse_csv_row(line, lineno);
    if (int(vals.size()) != 2 * J && int(vals.size()) != 3 * J)
      throw std::runtime_error("keypoint csv line " + std::to_string(lineno) + ": expected " +
                               std::to_string(2 * J) + " or " + std::to_string(3 * J) +
                               " fields, got " + std::to_string(vals.size()));
    if (rows.empty())
      with_z = int(vals.size()) == 3 * J;
    else if (with_z != (int(vals.size()) == 3 * J))
      throw std::runtime_error("keypoint csv line " + std::to_string(lineno) +
                               ": inconsistent column count");
    for (double v : vals) checksum = fnv1a_accumulate(checksum, v);
    if (raw_index % stride == 0) rows.push_back(std::move(vals));
    ++raw_index;
  }

  PoseDataset ds;
  ds.skel = skel;
  ds.meta.source = path;
  ds.meta.stride = stride;
  ds.meta.checksum = checksum;
  Eigen::Index n = Eigen::Index(rows.size());
  ds.poses2d.resize(n, 2 * J);
  if (with_z) ds.poses3d.resize(n, 3 * J);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[std::size_t(i)];
    for (int j = 0; j < J; ++j) {
      int jj = remap[j];
      ds.poses2d(i, jj) = r[std::size_t(j)];
      ds.poses2d(i, J + jj) = r[std::size_t(J + j)];
      if (with_z) {
        double z = r[std::size_t(2 * J + j)];
        // image coordinates + depth -> camera-frame 3D (normalized camera)
        ds.poses3d(i, jj) = r[std::size_t(j)] * z;
        ds.poses3d(i, J + jj) = r[std::size_t(J + j)] * z;
        ds.poses3d(i, 2 * J + jj) = z;
      }
    }
  }
  return ds;
}

/// Writes the canonical keypoint CSV (with a header row). When the dataset
/// carries 3D poses, per-joint depths are appended as z columns and the
/// stored 2D is expected to be the normalized-camera projection.
inline void save_keypoints(const PoseDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write keypoint file: " + path);
  int J = ds.skel.joints;
  bool with_z = ds.has_3d();
  for (int j = 0; j < J; ++j) out << (j ? "," : "") << "u_" << (j + 1);
  for (int j = 0; j < J; ++j) out << ",v_" << (j + 1);
  if (with_z)
    for (int j = 0; j < J; ++j) out << ",z_" << (j + 1);
  out << "\n";
  out.precision(17);
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (int c = 0; c < 2 * J; ++c) out << (c ? "," : "") << ds.poses2d(i, c);
    if (with_z)
      for (int j = 0; j < J; ++j) out << "," << ds.poses3d(i, 2 * J + j);
    out << "\n";
  }
}

/// Upright 3D template for the default 17-joint skeleton, in meters.
/// Axes: x right, y down (image convention), z toward the camera path.
inline Eigen::Matrix3Xd h36m_template() {
  Eigen::Matrix3Xd p(3, 17);
  p.col(0) << 0.00, 0.00, 0.00;    // pelvis
  p.col(1) << -0.13, 0.00, 0.00;   // r_hip
  p.col(2) << -0.14, 0.45, 0.02;   // r_knee
  p.col(3) << -0.15, 0.90, 0.00;   // r_ankle
  p.col(4) << 0.13, 0.00, 0.00;    // l_hip
  p.col(5) << 0.14, 0.45, 0.02;    // l_knee
  p.col(6) << 0.15, 0.90, 0.00;    // l_ankle
  p.col(7) << 0.00, -0.25, 0.01;   // spine
  p.col(8) << 0.00, -0.48, 0.00;   // thorax
  p.col(9) << 0.00, -0.58, 0.00;   // neck
  p.col(10) << 0.00, -0.72, 0.02;  // head
  p.col(11) << 0.18, -0.50, 0.00;  // l_shoulder
  p.col(12) << 0.30, -0.25, 0.03;  // l_elbow
  p.col(13) << 0.32, -0.02, 0.05;  // l_wrist
  p.col(14) << -0.18, -0.50, 0.00; // r_shoulder
  p.col(15) << -0.30, -0.25, 0.03; // r_elbow
  p.col(16) << -0.32, -0.02, 0.05; // r_wrist
  return p;
}

struct SynthConfig {
  SkeletonSpec skel = h36m_skeleton();
  Eigen::Matrix3Xd joint_template = h36m_template();  // [3 x J], meters
  int count = 1000;
  double bone_angle_range = 0.35;  // rad, per-bone perturbation half-range
  // Camera distance. Deliberately close to the subject (comparable to the
  // root->head length) so that perspective foreshortening makes per-joint
  // depth observable from the 2D projections; at large distances the
  // projection is near-orthographic and no lifter can recover depth.
  double depth = 0.8;
  double mu_elevation = 0.12;      // true camera elevation distribution
  double sigma_elevation = 0.05;
  double noise_std = 0.0;          // 2D noise in normalized image units
  // Per-pose relative bone-length jitter (uniform +-fraction), mimicking
  // body-proportion variation across subjects.
  double bone_length_jitter = 0.05;
};

struct TrueCamera {
  double mu_elevation = 0.0;
  double sigma_elevation = 0.0;
  std::vector<double> elevations;  // one per generated pose
  std::vector<double> azimuths;
};

namespace detail {

inline Eigen::Vector3d random_axis(Rng& rng) {
  while (true) {
    Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    double n = v.norm();
    if (n > 1e-8) return v / n;
  }
}

inline Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

}  // namespace detail

/// Samples articulated 3D poses by perturbing each template bone direction
/// with a random rotation (bone lengths are preserved exactly), places a
/// camera with elevation ~ N(mu*, sigma*) and azimuth ~ U[-pi, pi] at
/// distance D, and projects. 2D is stored in normalized image coordinates;
/// 3D ground truth is camera-frame.
inline PoseDataset generate_synthetic(const SynthConfig& cfg, Rng& rng,
                                      TrueCamera* truth = nullptr) {
  cfg.skel.validate();
  int J = cfg.skel.joints;
  if (cfg.joint_template.cols() != J)
    throw std::invalid_argument("generate_synthetic: template joint count mismatch");
  if (cfg.count < 1) throw std::invalid_argument("generate_synthetic: count must be >= 1");

  PoseDataset ds;
  ds.skel = cfg.skel;
  ds.meta.source = "synthetic";
  ds.poses2d.resize(cfg.count, 2 * J);
  ds.poses3d.resize(cfg.count, 3 * J);
  if (truth != nullptr) {
    truth->mu_elevation = cfg.mu_elevation;
    truth->sigma_elevation = cfg.sigma_elevation;
    truth->elevations.clear();
    truth->azimuths.clear();
  }

  // bones in tree order: parents always placed before children
  std::vector<std::pair<int, int>> order;
  std::vector<bool> placed(J, false);
  placed[cfg.skel.root] = true;
  while (int(order.size()) < J - 1) {
    for (auto [p, c] : cfg.skel.bones)
      if (placed[p] && !placed[c]) {
        order.emplace_back(p, c);
        placed[c] = true;
      }
  }

  for (int i = 0; i < cfg.count; ++i) {
    Eigen::Matrix3Xd cam(3, J);
    double e = 0.0, a = 0.0;
    // redraw the pose if a joint lands too close to (or behind) the camera
    for (int attempt = 0;; ++attempt) {
      Eigen::Matrix3Xd pose(3, J);
      pose.col(cfg.skel.root).setZero();
      for (auto [p, c] : order) {
        Eigen::Vector3d bone = cfg.joint_template.col(c) - cfg.joint_template.col(p);
        double angle = rng.uniform(-cfg.bone_angle_range, cfg.bone_angle_range);
        Eigen::Matrix3d r = detail::axis_angle(detail::random_axis(rng), angle);
        double stretch =
            1.0 + rng.uniform(-cfg.bone_length_jitter, cfg.bone_length_jitter);
        pose.col(c) = pose.col(p) + stretch * (r * bone);
      }
      pose.colwise() -= pose.col(cfg.skel.root).eval();

      e = rng.normal(cfg.mu_elevation, cfg.sigma_elevation);
      a = rng.uniform(-std::numbers::pi, std::numbers::pi);
      cam = rot_elevation(e) * (rot_azimuth(a) * pose);
      cam.row(2).array() += cfg.depth;
      if (cam.row(2).minCoeff() > 0.05 * cfg.depth) break;
      if (attempt >= 100)
        throw std::runtime_error("generate_synthetic: cannot place pose in front of camera");
    }
    if (truth != nullptr) {
      truth->elevations.push_back(e);
      truth->azimuths.push_back(a);
    }

    Vector y3 = flatten_3xj(cam);
    ds.poses3d.row(i) = y3.transpose();
    Vector x2 = project(y3);
    if (cfg.noise_std > 0)
      for (int k = 0; k < 2 * J; ++k) x2[k] += rng.normal(0.0, cfg.noise_std);
    ds.poses2d.row(i) = x2.transpose();
  }
  return ds;
}

/// Builds consistent 2D training data from 3D annotations: root-center each
/// 3D pose, apply `camera`, move to distance `depth`, project. Poses with
/// any joint at or behind the camera are dropped and counted in
/// meta.rejected.
inline PoseDataset reproject_3d_to_2d(const PoseDataset& src, const Matrix3& camera,
                                      double depth = 10.0) {
  if (!src.has_3d()) throw std::invalid_argument("reproject_3d_to_2d: dataset has no 3D poses");
  int J = src.skel.joints;
  std::vector<Eigen::Index> keep;
  Mat<double> all2d(src.size(), 2 * J);
  Mat<double> all3d(src.size(), 3 * J);
  for (Eigen::Index i = 0; i < src.size(); ++i) {
    Vector y = center_root(src.poses3d.row(i).transpose(), src.skel);
    y = apply_rotation(camera, y);
    for (int j = 0; j < J; ++j) y[2 * J + j] += depth;
    bool ok = true;
    for (int j = 0; j < J; ++j)
      if (y[2 * J + j] <= 0) ok = false;
    if (!ok) continue;
    all3d.row(Eigen::Index(keep.size())) = y.transpose();
    all2d.row(Eigen::Index(keep.size())) = project(y).transpose();
    keep.push_back(i);
  }
  PoseDataset out;
  out.skel = src.skel;
  out.meta = src.meta;
  out.meta.rejected += int(src.size() - Eigen::Index(keep.size()));
  out.poses2d = all2d.topRows(Eigen::Index(keep.size()));
  out.poses3d = all3d.topRows(Eigen::Index(keep.size()));
  return out;
}

/// Normalizes every 2D pose; degenerate poses are dropped and counted.
/// Returns [M x 2J] with M <= N; `kept` (if given) receives the surviving
/// row indices so 3D ground truth stays paired.
inline Mat<double> normalize_dataset(const PoseDataset& ds, int* rejected = nullptr,
                                     std::vector<Eigen::Index>* kept = nullptr) {
  Mat<double> out(ds.size(), 2 * ds.skel.joints);
  if (kept != nullptr) kept->clear();
  Eigen::Index m = 0;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    auto n = normalize_pose(ds.poses2d.row(i).transpose(), ds.skel);
    if (!n) continue;
    if (kept != nullptr) kept->push_back(i);
    out.row(m++) = n->transpose();
  }
  if (rejected != nullptr) *rejected = int(ds.size() - m);
  return out.topRows(m);
}

}  // namespace poselift

#endif  // POSELIFT_DATA_HPP_
