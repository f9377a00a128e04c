#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "lietorch/pde_ops.hpp"

namespace lietorch::cli {

/// Raised for NaN results and non-converged solvers; maps to exit code 2.
struct NumericalFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Layer spec JSON:
///   {"alpha": .65, "T": 1, "radii": [rx, ry, rtheta], "padding": "zero",
///    "channels": [{"convection": [c1, c2, c3], "dilation": [wM, wL, wA],
///                  "erosion": [wM, wL, wA], "diffusion": [wM, wL, wA]}],
///    "affine": {"a": [[...], ...], "b": [...], "normalize": false}}
/// Metric entries are weights, not log-weights. "diffusion" and "affine" are optional
/// (an absent affine block means the identity).
CDELayerSpec layer_spec_from_json(const nlohmann::json& j);
nlohmann::json layer_spec_to_json(const CDELayerSpec& spec);

/// Nine significant digits.
std::string format_float(double v);

/// Entry point: 0 on success, 1 on validation errors, 2 on numerical failure.
int run(int argc, char** argv);

}  // namespace lietorch::cli
