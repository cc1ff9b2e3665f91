#include "handforge/embedding.hpp"

#include <Eigen/SVD>

#include "handforge/kinematics.hpp"

namespace handforge {

void PoseEmbedding::validate() const {
  if (mean.size() != full_dim) throw DataError("PoseEmbedding: mean size != full_dim");
  if (basis.cols() != full_dim) throw DataError("PoseEmbedding: basis cols != full_dim");
  if (variances.size() != basis.rows())
    throw DataError("PoseEmbedding: variance count != component count");
  if (basis.rows() > full_dim) throw DataError("PoseEmbedding: more components than dims");
  const MatX gram = basis * basis.transpose();
  if ((gram - MatX::Identity(basis.rows(), basis.rows())).cwiseAbs().maxCoeff() > 1e-8)
    throw DataError("PoseEmbedding: basis rows not orthonormal");
  for (int i = 1; i < variances.size(); ++i)
    if (variances[i] > variances[i - 1] + 1e-12)
      throw DataError("PoseEmbedding: variances not sorted non-increasing");
}

PoseEmbedding fit_pose_pca(const std::vector<VecX>& poses, int k) {
  if (poses.empty()) throw DataError("fit_pose_pca: no poses");
  const int dim = static_cast<int>(poses[0].size());
  if (k < 0 || k > dim) throw DataError("fit_pose_pca: k out of range [0, dim]");
  if (static_cast<int>(poses.size()) < k + 1)
    throw DataError("fit_pose_pca: need at least k+1 poses");

  const int n = static_cast<int>(poses.size());
  MatX data(n, dim);
  for (int i = 0; i < n; ++i) {
    if (poses[i].size() != dim) throw DataError("fit_pose_pca: inconsistent pose lengths");
    data.row(i) = canonicalize_pose(poses[i]);
  }

  PoseEmbedding out;
  out.full_dim = dim;
  out.mean = data.colwise().mean();
  data.rowwise() -= out.mean.transpose();

  Eigen::JacobiSVD<MatX> svd(data, Eigen::ComputeThinV);
  const int rank = static_cast<int>(svd.singularValues().size());

  out.basis = MatX::Zero(k, dim);
  out.variances = VecX::Zero(k);
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (int c = 0; c < k; ++c) {
    VecX dir;
    if (c < rank) {
      dir = svd.matrixV().col(c);
      out.variances[c] = svd.singularValues()[c] * svd.singularValues()[c] / denom;
    } else {
      // Degenerate fill: extend with canonical axes orthogonal to the chosen rows.
      bool found = false;
      for (int axis = 0; axis < dim && !found; ++axis) {
        dir = VecX::Unit(dim, axis);
        for (int r = 0; r < c; ++r)
          dir -= out.basis.row(r).dot(dir) * out.basis.row(r).transpose();
        const double len = dir.norm();
        if (len > 1e-6) {
          dir /= len;
          found = true;
        }
      }
      if (!found) throw DataError("fit_pose_pca: failed to complete degenerate basis");
    }
    // Sign fix: largest-magnitude entry positive, first such index on ties.
    int arg = 0;
    dir.cwiseAbs().maxCoeff(&arg);
    if (dir[arg] < 0.0) dir = -dir;
    out.basis.row(c) = dir.transpose();
  }
  return out;
}

VecX embedding_encode(const PoseEmbedding& embedding, const VecX& pose) {
  if (pose.size() != embedding.full_dim)
    throw DataError("embedding_encode: pose length != full_dim");
  return embedding.basis * (canonicalize_pose(pose) - embedding.mean);
}

VecX embedding_decode(const PoseEmbedding& embedding, const VecX& coefficients) {
  if (coefficients.size() != embedding.components())
    throw DataError("embedding_decode: coefficient count != components");
  return embedding.mean + embedding.basis.transpose() * coefficients;
}

VecX compactness_curve(const PoseEmbedding& embedding) {
  const double total = embedding.variances.sum();
  VecX curve(embedding.variances.size());
  if (total <= 0.0) {
    curve.setOnes();
    return curve;
  }
  double acc = 0.0;
  for (int i = 0; i < embedding.variances.size(); ++i) {
    acc += embedding.variances[i];
    curve[i] = acc / total;
  }
  return curve;
}

}  // namespace handforge
