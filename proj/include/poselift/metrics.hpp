#ifndef POSELIFT_METRICS_HPP_
#define POSELIFT_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "poselift/geometry.hpp"

namespace poselift {

/// Per-joint Euclidean distances between two flattened 3D poses (mm in, mm
/// out).
inline Eigen::VectorXd perjoint_errors(const Vector& pred, const Vector& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("perjoint_errors: size mismatch");
  int J = int(pred.size() / 3);
  Eigen::VectorXd e(J);
  for (int j = 0; j < J; ++j) {
    Eigen::Vector3d d(pred[j] - gt[j], pred[J + j] - gt[J + j],
                      pred[2 * J + j] - gt[2 * J + j]);
    e[j] = d.norm();
  }
  return e;
}

struct MpjpeTriple {
  double mpjpe = 0;    // raw
  double n_mpjpe = 0;  // after the optimal per-pose scale
  double pa_mpjpe = 0; // after Procrustes alignment (rotation+scale+shift)
};

/// The three joint-error metrics for one root-centered pose pair, in the
/// units of the inputs (mm expected).
///
/// The scale / Procrustes fits minimize the summed squared error, which on
/// very noisy pairs can slightly increase the mean per-joint norm; each
/// aligned metric therefore falls back to the weaker alignment when the fit
/// does not help, keeping PA <= N <= raw per pose.
inline MpjpeTriple mpjpe_family(const Vector& pred, const Vector& gt) {
  double pp = pred.squaredNorm();
  if (pp < 1e-24) throw std::domain_error("mpjpe_family: zero-norm prediction");
  MpjpeTriple out;
  out.mpjpe = perjoint_errors(pred, gt).mean();
  double s = pred.dot(gt) / pp;  // argmin_s ||s*pred - gt||
  out.n_mpjpe = std::min(out.mpjpe, perjoint_errors(s * pred, gt).mean());
  out.pa_mpjpe =
      std::min(out.n_mpjpe, perjoint_errors(procrustes_align(pred, gt), gt).mean());
  return out;
}

/// PCK and AUC on one pose under the N- protocol: errors are computed after
/// the optimal per-pose scale. PCK is the percentage of joints within
/// `threshold` mm; AUC averages PCK over the grid 0:step:threshold.
struct PckAuc {
  double pck = 0;  // percent
  double auc = 0;  // percent
};

inline PckAuc pck_auc(const Vector& pred, const Vector& gt, double threshold = 150.0,
                      double step = 5.0) {
  double pp = pred.squaredNorm();
  if (pp < 1e-24) throw std::domain_error("pck_auc: zero-norm prediction");
  double s = pred.dot(gt) / pp;
  Eigen::VectorXd err = perjoint_errors(s * pred, gt);
  int J = int(err.size());
  PckAuc out;
  out.pck = 100.0 * double((err.array() <= threshold).count()) / double(J);
  int grid = int(std::round(threshold / step)) + 1;  // 0, step, ..., threshold
  double acc = 0;
  for (int g = 0; g < grid; ++g) {
    double th = step * g;
    acc += 100.0 * double((err.array() <= th).count()) / double(J);
  }
  out.auc = acc / double(grid);
  return out;
}

/// Correct Poses Score: area (mm) under the curve "fraction of poses whose
/// max Procrustes-aligned joint error is below theta", theta in 1mm steps
/// over [0, 300].
inline double cps(const std::vector<Vector>& pred, const std::vector<Vector>& gt,
                  double max_threshold = 300.0) {
  if (pred.size() != gt.size() || pred.empty())
    throw std::invalid_argument("cps: need equal-size non-empty pose sets");
  std::vector<double> max_err(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    max_err[i] = perjoint_errors(procrustes_align(pred[i], gt[i]), gt[i]).maxCoeff();
  double area = 0;
  for (int th = 1; th <= int(max_threshold); ++th) {
    int ok = 0;
    for (double m : max_err)
      if (m < double(th)) ++ok;
    area += double(ok) / double(pred.size());
  }
  return area;
}

struct EvalReport {
  int poses = 0;
  double mpjpe = 0, n_mpjpe = 0, pa_mpjpe = 0;  // mm, aggregate means
  double pck = 0, auc = 0;                       // percent
  double cps = 0;                                // mm
  std::vector<MpjpeTriple> per_pose;
};

/// Aggregates all metrics over paired root-centered pose lists (mm).
inline EvalReport evaluate_poses(const std::vector<Vector>& pred,
                                 const std::vector<Vector>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw std::invalid_argument("evaluate_poses: need equal-size non-empty pose sets");
  EvalReport r;
  r.poses = int(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    MpjpeTriple m = mpjpe_family(pred[i], gt[i]);
    if (!(m.pa_mpjpe <= m.n_mpjpe + 1e-9 && m.n_mpjpe <= m.mpjpe + 1e-9))
      throw std::logic_error("evaluate_poses: alignment increased the error");
    r.per_pose.push_back(m);
    r.mpjpe += m.mpjpe;
    r.n_mpjpe += m.n_mpjpe;
    r.pa_mpjpe += m.pa_mpjpe;
    PckAuc pa = pck_auc(pred[i], gt[i]);
    r.pck += pa.pck;
    r.auc += pa.auc;
  }
  r.mpjpe /= r.poses;
  r.n_mpjpe /= r.poses;
  r.pa_mpjpe /= r.poses;
  r.pck /= r.poses;
  r.auc /= r.poses;
  r.cps = cps(pred, gt);
  return r;
}

inline void save_eval_report(const EvalReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out.precision(10);
  out << "metric,value\n";
  out << "poses," << r.poses << "\n";
  out << "mpjpe_mm," << r.mpjpe << "\n";
  out << "n_mpjpe_mm," << r.n_mpjpe << "\n";
  out << "pa_mpjpe_mm," << r.pa_mpjpe << "\n";
  out << "pck_150_pct," << r.pck << "\n";
  out << "auc_pct," << r.auc << "\n";
  out << "cps_mm," << r.cps << "\n";
}

/// Spearman rank correlation; ties get average ranks.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman: need two equal-length series of size >= 2");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      double avg = 0.5 * double(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= double(ra.size());
  mb /= double(rb.size());
  double num = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va < 1e-12 || vb < 1e-12) return 0.0;
  return num / std::sqrt(va * vb);
}

inline std::string format_eval_report(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "poses %d | MPJPE %.2f mm | N-MPJPE %.2f mm | PA-MPJPE %.2f mm | "
                "PCK@150 %.2f%% | AUC %.2f%% | CPS %.2f",
                r.poses, r.mpjpe, r.n_mpjpe, r.pa_mpjpe, r.pck, r.auc, r.cps);
  return std::string(buf);
}

}  // namespace poselift

#endif  // POSELIFT_METRICS_HPP_
