#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "magtable/allocator.hpp"
#include "magtable/calibkit.hpp"
#include "magtable/geomkit.hpp"
#include "magtable/layoutopt.hpp"
#include "magtable/types.hpp"

namespace magtable::io {

/// Parse a JSON file; failures raise ParseError naming the file and, for
/// syntax errors, the parser's position diagnostics.
nlohmann::json load_json_file(const std::string& path);
void save_json_file(const std::string& path, const nlohmann::json& value);

/// True when the document carries a coil array ("coils" key) rather than a
/// control matrix.
bool looks_like_array(const nlohmann::json& j);

CoilArray array_from_json(const nlohmann::json& j);
nlohmann::json array_to_json(const CoilArray& array);
CoilArray load_array(const std::string& path);
void save_array(const std::string& path, const CoilArray& array);

/// Control matrix schema: at_m, rows_field_T_per_unit (3 rows),
/// rows_gradient_Tpm_per_unit (5 rows), source "dipole"|"calibrated". A
/// fixture may carry "units": "mT_per_A"; its row values are multiplied by
/// 1e-3 on load. Writers always emit T per unit and no units tag.
ControlMatrix matrix_from_json(const nlohmann::json& j);
nlohmann::json matrix_to_json(const ControlMatrix& matrix);
ControlMatrix load_matrix(const std::string& path);
void save_matrix(const std::string& path, const ControlMatrix& matrix);

/// Layout documents are coil-array JSON plus a "layout_params" echo of the
/// packed parameter vector. Loading falls back to deriving the parameters
/// from the coils when the echo is absent.
nlohmann::json layout_to_json(const CoilArray& array, const LayoutParams& params);
std::pair<CoilArray, LayoutParams> layout_from_json(const nlohmann::json& j);

nlohmann::json field_state_to_json(const FieldState& state);
nlohmann::json allocation_to_json(const AllocationResult& result);
nlohmann::json conditioning_to_json(const ConditioningReport& report);
nlohmann::json accessibility_to_json(const AccessibilityReport& report);
nlohmann::json coil_fit_to_json(const CoilFit& fit);

/// Sweep CSV: header coil_index,current_A,branch,pos_x_m,pos_y_m,pos_z_m,
/// Bx_T,By_T,Bz_T; branch is "ascending" or "descending" (case-insensitive).
std::vector<SweepRecord> load_sweep_csv(const std::string& path);
void save_sweep_csv(const std::string& path,
                    const std::vector<SweepRecord>& records);

/// Gantry displacement samples for gradient fits, one coil per four rows:
/// header coil_index,sample,pos_x_m,pos_y_m,pos_z_m,Bx_T,By_T,Bz_T with
/// sample one of base,dx,dy,dz. Returned sorted by coil index.
struct GradientSampleSet {
  int coil_index = 0;
  FieldSample base, dx, dy, dz;
};
std::vector<GradientSampleSet> load_gradient_csv(const std::string& path);
void save_gradient_csv(const std::string& path,
                       const std::vector<GradientSampleSet>& sets);

/// Descent trace CSV: iter,F,step,max_coil_top_m,min_surface_gap_m.
void save_trace_csv(const std::string& path,
                    const std::vector<TracePoint>& trace);

/// Shortest round-trip decimal form of a double (used for all CSV numbers).
std::string format_double(double value);

}  // namespace magtable::io
