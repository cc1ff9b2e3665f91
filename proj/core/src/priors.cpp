#include "handforge/priors.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <nlohmann/json.hpp>

#include "handforge/rng.hpp"

namespace handforge {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kCovarianceFloor = 1e-6;
}  // namespace

void GmmPrior::finalize() {
  const int n = components();
  if (n < 1) throw DataError("GmmPrior: no components");
  if (means.rows() != n || static_cast<int>(covariances.size()) != static_cast<size_t>(n))
    throw DataError("GmmPrior: component count mismatch");
  if (std::abs(weights.sum() - 1.0) > 1e-10) throw DataError("GmmPrior: weights must sum to 1");
  const int d = dim();
  whiteners.assign(n, MatX());
  log_normalizers.assign(n, 0.0);
  for (int j = 0; j < n; ++j) {
    if (weights[j] <= 0.0) throw DataError("GmmPrior: weights must be positive");
    if (covariances[j].rows() != d || covariances[j].cols() != d)
      throw DataError("GmmPrior: covariance size mismatch");
    Eigen::LLT<MatX> llt(covariances[j]);
    if (llt.info() != Eigen::Success)
      throw DataError("GmmPrior: covariance " + std::to_string(j) + " is not positive definite");
    const MatX lower = llt.matrixL();
    double log_det = 0.0;
    for (int i = 0; i < d; ++i) log_det += 2.0 * std::log(lower(i, i));
    whiteners[j] =
        lower.triangularView<Eigen::Lower>().solve(MatX::Identity(d, d));
    log_normalizers[j] = -std::log(weights[j]) + 0.5 * (d * kLog2Pi + log_det);
  }
}

namespace {

// Per-component negative log density.
double component_energy(const GmmPrior& prior, int j, const VecX& x) {
  const VecX white = prior.whiteners[j] * (x - prior.means.row(j).transpose());
  return prior.log_normalizers[j] + 0.5 * white.squaredNorm();
}

}  // namespace

int gmm_active_component(const GmmPrior& prior, const VecX& x) {
  if (x.size() != prior.dim()) throw DataError("gmm energy: dimension mismatch");
  int best = 0;
  double best_energy = component_energy(prior, 0, x);
  for (int j = 1; j < prior.components(); ++j) {
    const double e = component_energy(prior, j, x);
    if (e < best_energy) {
      best_energy = e;
      best = j;
    }
  }
  return best;
}

double gmm_energy(const GmmPrior& prior, const VecX& x) {
  return component_energy(prior, gmm_active_component(prior, x), x);
}

double gmm_energy_exact(const GmmPrior& prior, const VecX& x) {
  if (x.size() != prior.dim()) throw DataError("gmm energy: dimension mismatch");
  // -log sum exp(-E_j) with the max factored out for stability.
  VecX neg(prior.components());
  for (int j = 0; j < prior.components(); ++j) neg[j] = -component_energy(prior, j, x);
  const double m = neg.maxCoeff();
  return -(m + std::log((neg.array() - m).exp().sum()));
}

VecX gmm_energy_gradient(const GmmPrior& prior, const VecX& x) {
  const int j = gmm_active_component(prior, x);
  const VecX diff = x - prior.means.row(j).transpose();
  return prior.whiteners[j].transpose() * (prior.whiteners[j] * diff);
}

GmmPrior fit_gmm(const std::vector<VecX>& samples, int components, std::uint64_t seed,
                 int max_iters, double tol, std::vector<double>* loglik_trace) {
  if (samples.empty()) throw DataError("fit_gmm: empty data");
  if (components < 1) throw DataError("fit_gmm: need at least one component");
  const int n = static_cast<int>(samples.size());
  const int d = static_cast<int>(samples[0].size());
  if (n < 10 * components)
    throw DataError("fit_gmm: need at least 10 samples per component");

  MatX data(n, d);
  for (int i = 0; i < n; ++i) {
    if (samples[i].size() != d) throw DataError("fit_gmm: inconsistent sample dimensions");
    data.row(i) = samples[i];
  }

  // k-means++ seeding.
  Rng rng(seed);
  MatX centers(components, d);
  centers.row(0) = data.row(static_cast<int>(rng.below(n)));
  VecX min_d2 = (data.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < components; ++c) {
    const double total = min_d2.sum();
    int pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (; pick < n - 1; ++pick) {
        r -= min_d2[pick];
        if (r <= 0.0) break;
      }
    } else {
      pick = static_cast<int>(rng.below(n));
    }
    centers.row(c) = data.row(pick);
    min_d2 = min_d2.cwiseMin((data.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  GmmPrior prior;
  prior.weights = VecX::Constant(components, 1.0 / components);
  prior.means = centers;
  const MatX centered0 = data.rowwise() - data.colwise().mean();
  MatX pooled = centered0.transpose() * centered0 / std::max(1, n - 1);
  pooled.diagonal().array() += kCovarianceFloor;
  prior.covariances.assign(components, pooled);
  prior.finalize();

  auto floor_covariance = [](MatX& cov) {
    Eigen::SelfAdjointEigenSolver<MatX> eig(cov);
    if (eig.eigenvalues().minCoeff() >= kCovarianceFloor) return;
    const VecX clamped = eig.eigenvalues().cwiseMax(kCovarianceFloor);
    cov = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
  };

  if (loglik_trace) loglik_trace->clear();
  double prev_loglik = -std::numeric_limits<double>::infinity();
  MatX resp(n, components);
  for (int iter = 0; iter < max_iters; ++iter) {
    // E-step (log domain).
    double loglik = 0.0;
    for (int i = 0; i < n; ++i) {
      VecX neg(components);
      for (int j = 0; j < components; ++j)
        neg[j] = -component_energy(prior, j, data.row(i).transpose());
      const double m = neg.maxCoeff();
      const double lse = m + std::log((neg.array() - m).exp().sum());
      loglik += lse;
      resp.row(i) = (neg.array() - lse).exp();
    }
    if (loglik_trace) loglik_trace->push_back(loglik);

    // M-step.
    for (int j = 0; j < components; ++j) {
      const double nj = resp.col(j).sum();
      if (nj < 1e-12) continue;  // dead component keeps its parameters
      prior.weights[j] = nj / n;
      prior.means.row(j) = (resp.col(j).transpose() * data) / nj;
      const MatX centered = data.rowwise() - prior.means.row(j);
      MatX cov = centered.transpose() * (resp.col(j).asDiagonal() * centered) / nj;
      floor_covariance(cov);
      prior.covariances[j] = cov;
    }
    prior.weights /= prior.weights.sum();
    prior.finalize();

    if (iter > 0 && std::abs(loglik - prev_loglik) <=
                        tol * std::max(1.0, std::abs(prev_loglik)))
      break;
    prev_loglik = loglik;
  }
  return prior;
}

void save_gmm(const std::filesystem::path& path, const GmmPrior& prior) {
  nlohmann::json doc;
  doc["weights"] = std::vector<double>(prior.weights.data(),
                                       prior.weights.data() + prior.weights.size());
  for (int j = 0; j < prior.components(); ++j) {
    std::vector<double> mean(prior.dim());
    for (int c = 0; c < prior.dim(); ++c) mean[c] = prior.means(j, c);
    doc["means"].push_back(mean);
    nlohmann::json cov = nlohmann::json::array();
    for (int r = 0; r < prior.dim(); ++r) {
      std::vector<double> row(prior.dim());
      for (int c = 0; c < prior.dim(); ++c) row[c] = prior.covariances[j](r, c);
      cov.push_back(row);
    }
    doc["covariances"].push_back(cov);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

GmmPrior load_gmm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad GMM file " + path.string() + ": " + e.what());
  }
  GmmPrior prior;
  const auto weights = doc.at("weights").get<std::vector<double>>();
  const int n = static_cast<int>(weights.size());
  prior.weights = Eigen::Map<const VecX>(weights.data(), n);
  const auto& means = doc.at("means");
  const auto& covs = doc.at("covariances");
  if (static_cast<int>(means.size()) != n || static_cast<int>(covs.size()) != n)
    throw IoError("bad GMM file: component count mismatch");
  const int d = static_cast<int>(means.at(0).size());
  prior.means.resize(n, d);
  prior.covariances.assign(n, MatX(d, d));
  for (int j = 0; j < n; ++j) {
    const auto mean = means.at(j).get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != d) throw IoError("bad GMM file: mean size mismatch");
    prior.means.row(j) = Eigen::Map<const VecX>(mean.data(), d).transpose();
    for (int r = 0; r < d; ++r) {
      const auto row = covs.at(j).at(r).get<std::vector<double>>();
      if (static_cast<int>(row.size()) != d)
        throw IoError("bad GMM file: covariance size mismatch");
      for (int c = 0; c < d; ++c) prior.covariances[j](r, c) = row[c];
    }
  }
  prior.finalize();
  return prior;
}

}  // namespace handforge
