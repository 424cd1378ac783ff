#ifndef POSELIFT_PCA_HPP_
#define POSELIFT_PCA_HPP_

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <stdexcept>
#include <string>

#include "poselift/tensor.hpp"

namespace poselift {

/// Mean + orthonormal basis of the top-M principal components, with the
/// full variance spectrum retained so coverage queries stay exact.
template <class S>
struct PcaModel {
  Mat<S> mean;       // [1 x dim]
  Mat<S> basis;      // [dim x M], orthonormal columns
  Vec<S> variances;  // full spectrum, descending
  S total_variance = S(0);

  int dim() const { return int(mean.cols()); }
  int bases() const { return int(basis.cols()); }
};

/// Mean-centered PCA via SVD. Deterministic sign convention: the
/// largest-magnitude entry of each basis vector is positive.
template <class S>
PcaModel<S> fit_pca(const Mat<S>& data, int M) {
  Eigen::Index n = data.rows();
  Eigen::Index dim = data.cols();
  if (M < 1 || M > dim)
    throw std::invalid_argument("fit_pca: M = " + std::to_string(M) +
                                " outside [1, " + std::to_string(dim) + "]");
  if (n <= M)
    throw std::invalid_argument("fit_pca: need more samples (" + std::to_string(n) +
                                ") than bases (" + std::to_string(M) + ")");
  Eigen::MatrixXd x = data.template cast<double>();
  Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - mean;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  Eigen::VectorXd sv = svd.singularValues();
  Eigen::MatrixXd v = svd.matrixV();
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    Eigen::Index imax;
    v.col(j).cwiseAbs().maxCoeff(&imax);
    if (v(imax, j) < 0) v.col(j) = -v.col(j);
  }
  PcaModel<S> model;
  model.mean = mean.template cast<S>();
  model.basis = v.leftCols(M).template cast<S>();
  Eigen::VectorXd vars = sv.array().square() / double(n - 1);
  model.variances = vars.template cast<S>();
  model.total_variance = S(vars.sum());
  return model;
}

/// c = B^T (x - mean), rows are samples.
template <class S>
Mat<S> to_subspace(const Mat<S>& x, const PcaModel<S>& pca) {
  return (x.rowwise() - pca.mean.row(0)) * pca.basis;
}

/// x_hat = B c + mean.
template <class S>
Mat<S> from_subspace(const Mat<S>& c, const PcaModel<S>& pca) {
  return (c * pca.basis.transpose()).rowwise() + pca.mean.row(0);
}

template <class S>
Val<S> g_to_subspace(Tape<S>& t, Val<S> x, const PcaModel<S>& pca) {
  Val<S> centered = t.sub(x, t.constant(pca.mean));
  return t.matmul(centered, t.constant(pca.basis));
}

template <class S>
Val<S> g_from_subspace(Tape<S>& t, Val<S> c, const PcaModel<S>& pca) {
  Val<S> x = t.matmul(c, t.constant(Mat<S>(pca.basis.transpose())));
  return t.add(x, t.constant(pca.mean));
}

/// Cumulative variance ratio of the top-m components.
template <class S>
S variance_coverage(const PcaModel<S>& pca, int m) {
  if (m < 0 || m > int(pca.variances.size()))
    throw std::invalid_argument("variance_coverage: m out of range");
  if (pca.total_variance <= S(0)) return S(0);
  S acc = S(0);
  for (int i = 0; i < m; ++i) acc += pca.variances[i];
  return acc / pca.total_variance;
}

}  // namespace poselift

#endif  // POSELIFT_PCA_HPP_
