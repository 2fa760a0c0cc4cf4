#pragma once

// Numerical self-checks shared by the `selftest` command and the acceptance
// runner. Each check returns a verdict plus the measured quantity.

#include "dgnlab/harness.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace dgnlab {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Worst elementwise relative error of analytic vs central-difference
/// gradients for each trainable module.
struct GradientErrors {
  double actor = 0.0;
  double critic = 0.0;
  double covnet = 0.0;
  double global_cov = 0.0;
  double residual = 0.0;
  double bc_mean = 0.0;
  double bc_std = 0.0;

  double worst() const;
};

GradientErrors gradient_errors(std::uint64_t seed);
CheckResult check_gradients(double tol = 1e-4, int trials = 3);

/// Largest relative Frobenius error between the empirical covariance of
/// `draws` noise samples and A A^T, over `nets` random covariance nets.
double covariance_fidelity_error(int nets, long draws, std::uint64_t seed);
CheckResult check_covariance_fidelity(int nets = 10, long draws = 100000, double tol = 0.05);

struct NllRecovery {
  double fitted = 0.0;   // eval-mode mean NLL after fitting
  double optimum = 0.0;  // 0.5 log det(2 pi e Sigma*)
};

NllRecovery nll_recovery(std::uint64_t seed, Index samples, int epochs);
CheckResult check_nll_recovery(double tol = 0.05, Index samples = 4000, int epochs = 150);

struct AblationResult {
  double covnet = 0.0;
  double global = 0.0;
  double covnet_optimum = 0.0;  // analytic best for a state-conditioned model
  double global_optimum = 0.0;  // analytic best for one shared covariance
};

AblationResult state_conditioning_ablation(std::uint64_t seed, Index samples, int epochs);
CheckResult check_state_conditioning(double margin = 0.1, Index samples = 4000, int epochs = 150);

CheckResult check_schedules();
CheckResult check_ibrl_balance(long draws = 100000, double tol = 0.01);
CheckResult check_kl_cases(double tol = 1e-9);

/// Byte comparison of two files.
bool files_identical(const std::filesystem::path& a, const std::filesystem::path& b);

/// Runs RFT with lambda = 0 and RLPD from the same config and compares their
/// metrics CSVs and final checkpoints byte for byte.
CheckResult check_rft_equivalence(const ExperimentConfig& base);

/// Runs `config` twice into sibling directories and compares metrics CSVs.
CheckResult check_determinism(const ExperimentConfig& config);

/// A fresh scratch directory under the system temp path.
std::filesystem::path scratch_dir(const std::string& tag);

/// Small maze setup used by the quick end-to-end checks.
ExperimentConfig quick_maze_config(const std::filesystem::path& dir, long total_steps);

/// Every check at sizes that finish in well under a minute.
std::vector<CheckResult> run_selftest(const std::function<void(const CheckResult&)>& on_result = {});

}  // namespace dgnlab
