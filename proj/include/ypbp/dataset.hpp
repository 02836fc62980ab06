#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ypbp/errors.hpp"
#include "ypbp/yp_model.hpp"

namespace ypbp {

/// Right-censored observations with a time-varying-effect block Z (n x q) and
/// a constant-effect block X (n x p, possibly p = 0).
class SurvivalDataset {
 public:
  SurvivalDataset() = default;

  SurvivalDataset(std::vector<double> time, std::vector<int> status, Eigen::MatrixXd z, Eigen::MatrixXd x,
                  std::vector<std::string> z_names = {}, std::vector<std::string> x_names = {})
      : time_(std::move(time)),
        status_(std::move(status)),
        z_(std::move(z)),
        x_(std::move(x)),
        z_names_(std::move(z_names)),
        x_names_(std::move(x_names)) {
    const auto n = static_cast<Eigen::Index>(time_.size());
    if (n == 0) throw ContractError("dataset: no observations");
    if (static_cast<Eigen::Index>(status_.size()) != n || z_.rows() != n || x_.rows() != n) {
      throw ContractError("dataset: time, status, Z and X must have the same number of rows");
    }
    if (x_.cols() == 0) x_.resize(n, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(time_[i] > 0.0) || !std::isfinite(time_[i])) {
        throw ContractError("dataset: row " + std::to_string(i + 1) + " has a nonpositive or non-finite time");
      }
      if (status_[i] != 0 && status_[i] != 1) {
        throw ContractError("dataset: row " + std::to_string(i + 1) + " has status outside {0, 1}");
      }
    }
    if (!z_.allFinite() || !x_.allFinite()) throw ContractError("dataset: covariates must be finite");
    if (z_names_.empty()) {
      for (Eigen::Index j = 0; j < z_.cols(); ++j) z_names_.push_back("z" + std::to_string(j + 1));
    }
    if (x_names_.empty()) {
      for (Eigen::Index j = 0; j < x_.cols(); ++j) x_names_.push_back("x" + std::to_string(j + 1));
    }
    if (static_cast<Eigen::Index>(z_names_.size()) != z_.cols() ||
        static_cast<Eigen::Index>(x_names_.size()) != x_.cols()) {
      throw ContractError("dataset: column name count does not match the covariate blocks");
    }
    tau_hat_ = *std::max_element(time_.begin(), time_.end());
  }

  std::size_t n() const { return time_.size(); }
  Eigen::Index q() const { return z_.cols(); }
  Eigen::Index p() const { return x_.cols(); }
  double tau_hat() const { return tau_hat_; }

  const std::vector<double>& time() const { return time_; }
  const std::vector<int>& status() const { return status_; }
  const Eigen::MatrixXd& z() const { return z_; }
  const Eigen::MatrixXd& x() const { return x_; }
  const std::vector<std::string>& z_names() const { return z_names_; }
  const std::vector<std::string>& x_names() const { return x_names_; }

  std::size_t events() const { return static_cast<std::size_t>(std::count(status_.begin(), status_.end(), 1)); }

  CovariateRow row(std::size_t i) const { return {z_.row(static_cast<Eigen::Index>(i)).transpose(), x_.row(static_cast<Eigen::Index>(i)).transpose()}; }

  // Throws unless the data can support a likelihood: at least one event.
  void require_events() const {
    if (events() == 0) throw ContractError("dataset: at least one event is required (all observations censored)");
  }

  // Rows picked by index, with repetition allowed (bootstrap resamples).
  SurvivalDataset select(std::span<const std::size_t> rows) const {
    std::vector<double> t(rows.size());
    std::vector<int> s(rows.size());
    Eigen::MatrixXd z(static_cast<Eigen::Index>(rows.size()), q());
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), p());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto i = rows[r];
      if (i >= n()) throw ContractError("dataset: row index out of range");
      t[r] = time_[i];
      s[r] = status_[i];
      z.row(static_cast<Eigen::Index>(r)) = z_.row(static_cast<Eigen::Index>(i));
      x.row(static_cast<Eigen::Index>(r)) = x_.row(static_cast<Eigen::Index>(i));
    }
    return SurvivalDataset(std::move(t), std::move(s), std::move(z), std::move(x), z_names_, x_names_);
  }

  // Moves constant-effect columns into the time-varying block (fitting a star
  // layout with an original-formulation variant).
  SurvivalDataset merged_blocks() const {
    Eigen::MatrixXd z(static_cast<Eigen::Index>(n()), q() + p());
    z << z_, x_;
    std::vector<std::string> names = z_names_;
    names.insert(names.end(), x_names_.begin(), x_names_.end());
    return SurvivalDataset(time_, status_, std::move(z), Eigen::MatrixXd(static_cast<Eigen::Index>(n()), 0), std::move(names), {});
  }

 private:
  std::vector<double> time_;
  std::vector<int> status_;
  Eigen::MatrixXd z_;
  Eigen::MatrixXd x_;
  std::vector<std::string> z_names_;
  std::vector<std::string> x_names_;
  double tau_hat_ = 0.0;
};

struct StepPoint {
  double time;
  double value;
};

namespace detail {

template <class Accumulate>
std::vector<StepPoint> event_steps(std::span<const double> time, std::span<const int> status, double start,
                                   Accumulate&& step) {
  std::vector<std::size_t> order(time.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return time[a] < time[b]; });
  std::vector<StepPoint> out;
  double value = start;
  std::size_t at_risk = time.size();
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = time[order[i]];
    std::size_t deaths = 0;
    std::size_t leaving = 0;
    while (i < order.size() && time[order[i]] == t) {
      deaths += static_cast<std::size_t>(status[order[i]] == 1);
      ++leaving;
      ++i;
    }
    if (deaths > 0) {
      value = step(value, static_cast<double>(deaths), static_cast<double>(at_risk));
      out.push_back({t, value});
    }
    at_risk -= leaving;
  }
  return out;
}

}  // namespace detail

// Kaplan-Meier survival estimate, one point per distinct event time.
inline std::vector<StepPoint> kaplan_meier(std::span<const double> time, std::span<const int> status) {
  return detail::event_steps(time, status, 1.0,
                             [](double s, double d, double r) { return s * (1.0 - d / r); });
}

// Nelson-Aalen cumulative hazard estimate, one point per distinct event time.
inline std::vector<StepPoint> nelson_aalen(std::span<const double> time, std::span<const int> status) {
  return detail::event_steps(time, status, 0.0, [](double h, double d, double r) { return h + d / r; });
}

}  // namespace ypbp
