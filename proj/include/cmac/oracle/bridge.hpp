#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmac/model.hpp"
#include "cmac/oracle/oracle.hpp"

// Glue between production modules and the oracle: copies values across and
// builds micro-scale models. No arithmetic on model values happens here.
namespace cmac::oracle {

// Caps for anything an oracle runs on.
inline constexpr std::size_t kMaxOracleParameters = 300;
inline constexpr std::size_t kMaxOracleGridAxis = 8;

Array to_array(const Tensor& t);
Tensor to_tensor(const Array& a);

ParamMap params_from_model(CmacModel& model);
PipelineConfig pipeline_config(const ModelConfig& cfg);
LossConfig loss_config(const ContrastiveConfig& cfg);

std::size_t trainable_count(CmacModel& model);
// Throws ContractError when the model exceeds the oracle caps.
void check_micro_caps(CmacModel& model);

// The fixed micro-model used by gradient checks (about 120 parameters).
ModelConfig micro_model_config(std::uint64_t seed = 1);
// A random micro-model: widths, norms, pyramid mode/scales and loss flags
// all drawn from `seed`. Always within the caps.
ModelConfig random_micro_config(std::uint64_t seed);

// Replaces every parameter (online, target, heads) with random values so no
// identity or zero initialisation hides a wiring mistake.
void randomize_state(CmacModel& model, std::uint64_t seed);

// Random inputs for a micro-model; fills second views in positives mode.
StepInput random_micro_input(const ModelConfig& cfg, std::size_t batch, std::uint64_t seed);
PipelineInput pipeline_input(const StepInput& in, CmacModel& model);

// Pushes `rows` random unit vectors into both banks.
void fill_banks(CmacModel& model, std::size_t rows, std::uint64_t seed);

struct GradcheckEntry {
  std::string name;  // parameter name and flat index
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct GradcheckReport {
  std::size_t coordinates = 0;
  double max_rel_err = 0;
  std::string worst;
  std::vector<GradcheckEntry> entries;
};

// Autodiff gradient of the full objective against central differences for
// every trainable coordinate. The guided maps are frozen at their base value
// during the sweep, matching the stop-gradient in the consistency terms.
// `floor` is the smallest denominator of the relative error; it sits above
// the difference quotient's resolution (a few ulp of the loss over 2h), so
// gradients that are exactly zero (biases ahead of batch norm) compare
// against rounding noise rather than against zero.
GradcheckReport gradcheck_model(CmacModel& model, const StepInput& in, double h = 1e-5, double floor = 1e-5);

}  // namespace cmac::oracle
