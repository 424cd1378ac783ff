#ifndef POSELIFT_GEOMETRY_HPP_
#define POSELIFT_GEOMETRY_HPP_

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace poselift {

using Vector = Eigen::VectorXd;
using Matrix3 = Eigen::Matrix3d;

/// Skeleton metadata. Bones form a tree rooted at `root` (K = J - 1).
struct SkeletonSpec {
  int joints = 0;
  std::vector<std::string> joint_names;
  int root = 0;
  int head = 0;
  std::vector<std::pair<int, int>> bones;  // parent -> child

  void validate() const {
    if (joints < 3) throw std::invalid_argument("skeleton: need at least 3 joints");
    if (int(joint_names.size()) != joints)
      throw std::invalid_argument("skeleton: joint_names size != joint count");
    if (root < 0 || root >= joints || head < 0 || head >= joints || root == head)
      throw std::invalid_argument("skeleton: root/head indices invalid");
    if (int(bones.size()) != joints - 1)
      throw std::invalid_argument("skeleton: bone count must be J-1");
    std::vector<int> indeg(joints, 0);
    for (auto [p, c] : bones) {
      if (p < 0 || p >= joints || c < 0 || c >= joints)
        throw std::invalid_argument("skeleton: bone index out of range");
      indeg[c] += 1;
    }
    if (indeg[root] != 0)
      throw std::invalid_argument("skeleton: root must have no parent");
    for (int j = 0; j < joints; ++j)
      if (j != root && indeg[j] != 1)
        throw std::invalid_argument("skeleton: bones do not form a tree");
    // reachability from root
    std::vector<bool> seen(joints, false);
    seen[root] = true;
    bool changed = true;
    while (changed) {
      changed = false;
      for (auto [p, c] : bones)
        if (seen[p] && !seen[c]) {
          seen[c] = true;
          changed = true;
        }
    }
    for (int j = 0; j < joints; ++j)
      if (!seen[j]) throw std::invalid_argument("skeleton: joint unreachable from root");
  }
};

/// Default 17-joint Human3.6M-style skeleton.
inline SkeletonSpec h36m_skeleton() {
  SkeletonSpec s;
  s.joints = 17;
  s.joint_names = {"pelvis",     "r_hip",   "r_knee",     "r_ankle", "l_hip",
                   "l_knee",     "l_ankle", "spine",      "thorax",  "neck",
                   "head",       "l_shoulder", "l_elbow", "l_wrist", "r_shoulder",
                   "r_elbow",    "r_wrist"};
  s.root = 0;
  s.head = 10;
  s.bones = {{0, 1}, {1, 2}, {2, 3},  {0, 4},   {4, 5},   {5, 6},
             {0, 7}, {7, 8}, {8, 9},  {9, 10},  {8, 11},  {11, 12},
             {12, 13}, {8, 14}, {14, 15}, {15, 16}};
  s.validate();
  return s;
}

inline SkeletonSpec load_skeleton(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open skeleton file: " + path);
  nlohmann::json j;
  in >> j;
  SkeletonSpec s;
  s.joint_names = j.at("joint_names").get<std::vector<std::string>>();
  s.joints = int(s.joint_names.size());
  s.root = j.at("root").get<int>();
  s.head = j.at("head").get<int>();
  for (const auto& b : j.at("bones"))
    s.bones.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
  s.validate();
  return s;
}

inline void save_skeleton(const SkeletonSpec& s, const std::string& path) {
  nlohmann::json j;
  j["joint_names"] = s.joint_names;
  j["root"] = s.root;
  j["head"] = s.head;
  auto& bones = j["bones"] = nlohmann::json::array();
  for (auto [p, c] : s.bones) bones.push_back({p, c});
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

// Pose layout: 2D poses are [u_1..u_J, v_1..v_J], 3D poses [x.., y.., z..].

constexpr double kRootHeadDegeneracyThreshold = 1e-4;

/// Root-centers a 2D pose and scales it so the root->head distance is 1.
/// Returns nullopt when the root->head segment is degenerate.
inline std::optional<Vector> normalize_pose(const Vector& x, const SkeletonSpec& skel) {
  int J = skel.joints;
  if (x.size() != 2 * J)
    throw std::invalid_argument("normalize_pose: pose size " + std::to_string(x.size()) +
                                " != 2J = " + std::to_string(2 * J));
  double du = x[skel.head] - x[skel.root];
  double dv = x[J + skel.head] - x[J + skel.root];
  double len = std::sqrt(du * du + dv * dv);
  if (len < kRootHeadDegeneracyThreshold) return std::nullopt;
  Vector out(2 * J);
  for (int j = 0; j < J; ++j) {
    out[j] = (x[j] - x[skel.root]) / len;
    out[J + j] = (x[J + j] - x[J + skel.root]) / len;
  }
  return out;
}

/// Perspective projection, per joint [x/z, y/z]. Camera looks down +z.
inline Vector project(const Vector& y) {
  int J = int(y.size() / 3);
  if (y.size() != 3 * J || J == 0)
    throw std::invalid_argument("project: pose size not divisible by 3");
  Vector x(2 * J);
  for (int j = 0; j < J; ++j) {
    double z = y[2 * J + j];
    if (z <= 0)
      throw std::domain_error("project: joint " + std::to_string(j) +
                              " has depth " + std::to_string(z) + " <= 0 (behind camera)");
    x[j] = y[j] / z;
    x[J + j] = y[J + j] / z;
  }
  return x;
}

/// Perspective unprojection, y_j = [u_j w_j, v_j w_j, w_j].
inline Vector unproject(const Vector& x, const Vector& w) {
  int J = int(w.size());
  if (x.size() != 2 * J)
    throw std::invalid_argument("unproject: 2D pose size " + std::to_string(x.size()) +
                                " != 2J for J = " + std::to_string(J));
  Vector y(3 * J);
  for (int j = 0; j < J; ++j) {
    y[j] = x[j] * w[j];
    y[J + j] = x[J + j] * w[j];
    y[2 * J + j] = w[j];
  }
  return y;
}

/// Rotation about the camera x-axis (elevation). y is image-down.
inline Matrix3 rot_elevation(double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  Matrix3 r;
  r << 1, 0, 0,
       0, c, -s,
       0, s, c;
  return r;
}

/// Rotation about the up-axis (azimuth).
inline Matrix3 rot_azimuth(double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  Matrix3 r;
  r << c, 0, s,
       0, 1, 0,
       -s, 0, c;
  return r;
}

inline Eigen::Matrix3Xd reshape_3xj(const Vector& y) {
  int J = int(y.size() / 3);
  Eigen::Matrix3Xd p(3, J);
  for (int j = 0; j < J; ++j) {
    p(0, j) = y[j];
    p(1, j) = y[J + j];
    p(2, j) = y[2 * J + j];
  }
  return p;
}

inline Vector flatten_3xj(const Eigen::Matrix3Xd& p) {
  int J = int(p.cols());
  Vector y(3 * J);
  for (int j = 0; j < J; ++j) {
    y[j] = p(0, j);
    y[J + j] = p(1, j);
    y[2 * J + j] = p(2, j);
  }
  return y;
}

inline Vector apply_rotation(const Matrix3& r, const Vector& y) {
  return flatten_3xj(r * reshape_3xj(y));
}

inline Vector center_root(const Vector& y, const SkeletonSpec& skel) {
  int J = skel.joints;
  Vector out = y;
  double rx = y[skel.root], ry = y[J + skel.root], rz = y[2 * J + skel.root];
  for (int j = 0; j < J; ++j) {
    out[j] -= rx;
    out[J + j] -= ry;
    out[2 * J + j] -= rz;
  }
  return out;
}

/// Similarity (rotation + scale + translation) alignment of pred onto gt,
/// minimizing the summed squared joint distance. SVD-based with reflection
/// correction.
inline Vector procrustes_align(const Vector& pred, const Vector& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("procrustes_align: size mismatch " +
                                std::to_string(pred.size()) + " vs " +
                                std::to_string(gt.size()));
  Eigen::Matrix3Xd p = reshape_3xj(pred);
  Eigen::Matrix3Xd g = reshape_3xj(gt);
  int J = int(p.cols());
  Eigen::Vector3d mp = p.rowwise().mean();
  Eigen::Vector3d mg = g.rowwise().mean();
  Eigen::Matrix3Xd pc = p.colwise() - mp;
  Eigen::Matrix3Xd gc = g.colwise() - mg;
  Matrix3 cov = gc * pc.transpose() / double(J);
  Eigen::JacobiSVD<Matrix3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d = svd.singularValues();
  if (d[1] < 1e-12)
    throw std::domain_error("procrustes_align: degenerate (rank < 2) configuration");
  Matrix3 s = Matrix3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) s(2, 2) = -1;
  Matrix3 rot = svd.matrixU() * s * svd.matrixV().transpose();
  double var_p = pc.squaredNorm() / double(J);
  if (var_p < 1e-24)
    throw std::domain_error("procrustes_align: zero-variance prediction");
  double scale = (d.asDiagonal().toDenseMatrix() * s).trace() / var_p;
  Eigen::Matrix3Xd aligned = (scale * (rot * pc)).colwise() + mg;
  return flatten_3xj(aligned);
}

}  // namespace poselift

#endif  // POSELIFT_GEOMETRY_HPP_
