#pragma once

#include "lmflow/manifest.hpp"
#include "lmflow/registration.hpp"
#include "lmflow/uncertainty.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lmflow {

// ---- landmark CSV ----
// Header `label,x,y[,z][,noise_var]`, one row per landmark, UTF-8, LF.
// `#`-prefixed lines are skipped (writers put the manifest there). Numbers are
// written with 17 significant digits so round-trips are value-exact.

LandmarkSet read_landmarks_csv(const std::string& path);
LandmarkSet parse_landmarks_csv(const std::string& text, const std::string& origin);
void write_landmarks_csv(const std::string& path, const LandmarkSet& set,
                         const RunManifest& manifest);

// ---- flat key=value config ----
// One `key = value` per line; `#` comments; unknown keys are an error.
RegistrationConfig parse_config_text(const std::string& text, const std::string& origin);
RegistrationConfig read_config_file(const std::string& path);
std::map<std::string, std::string> config_to_map(const RegistrationConfig& config);

// ---- registration result JSON ----
// Top-level keys: mu0, residuals_mm, objective_trace, final_mean, final_cov
// (row-major), converged, manifest.
std::string result_to_json(const RegistrationResult& result, const RunManifest& manifest);
struct LoadedResult {
    RegistrationResult result;
    std::map<std::string, std::string> config;  // manifest's resolved config
};
LoadedResult read_result_json(const std::string& path);

// ---- uncertainty grid CSV ----
// Header x,y[,z],fc; one row per grid point.
void write_fc_csv(const std::string& path, const UncertaintyField& field,
                  const RunManifest& manifest);

// Single-file SVG heatmap of a 2D FC field (grey-to-blue), with landmark
// overlays. resolution x resolution cells.
void write_fc_svg(const std::string& path, const UncertaintyField& field, int resolution,
                  const Mat& moving, const Mat& fixed);

// ---- leave-one-out report CSV ----
// Header label,pre_mm,post_mm,predicted_fc. Failed folds carry nan fields.
void write_loo_csv(const std::string& path, const std::vector<LooFold>& folds,
                   const RunManifest& manifest);

// ---- generic helpers ----
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::string format_double(double v);  // %.17g
}  // namespace lmflow
