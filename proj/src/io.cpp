#include "magtable/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "magtable/errors.hpp"

namespace magtable::io {

namespace {

using nlohmann::json;

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

const json& require_key(const json& j, const char* key, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key)) {
    throw ParseError(ctx + ": missing key '" + key + "'");
  }
  return j.at(key);
}

double require_number(const json& j, const std::string& ctx) {
  if (!j.is_number()) throw ParseError(ctx + ": expected a number");
  return j.get<double>();
}

double positive_number(const json& j, const std::string& ctx) {
  const double v = require_number(j, ctx);
  if (!(v > 0.0)) throw ParseError(ctx + ": must be positive");
  return v;
}

Vec3 vec3_from(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 3) {
    throw ParseError(ctx + ": expected an array of 3 numbers");
  }
  Vec3 out;
  for (int k = 0; k < 3; ++k) out(k) = require_number(j.at(k), ctx);
  return out;
}

std::vector<double> numbers_from(const json& j, const std::string& ctx) {
  if (!j.is_array()) throw ParseError(ctx + ": expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const json& v : j) out.push_back(require_number(v, ctx));
  return out;
}

json vec_to_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_double_field(const std::string& text, const std::string& path,
                          int line, const char* field) {
  const std::string t = trim(text);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    std::ostringstream os;
    os << path << " line " << line << ": field '" << field
       << "' is not a number: '" << text << "'";
    throw ParseError(os.str());
  }
  return value;
}

int parse_int_field(const std::string& text, const std::string& path, int line,
                    const char* field) {
  const std::string t = trim(text);
  int value = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    std::ostringstream os;
    os << path << " line " << line << ": field '" << field
       << "' is not an integer: '" << text << "'";
    throw ParseError(os.str());
  }
  return value;
}

std::vector<std::string> read_csv(const std::string& path,
                                  const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError(path + ": empty file, expected a header row");
  }
  const std::vector<std::string> found = split_fields(line);
  if (found != header) {
    std::ostringstream os;
    os << path << " line 1: bad header, expected '";
    for (std::size_t i = 0; i < header.size(); ++i) {
      os << (i ? "," : "") << header[i];
    }
    os << "'";
    throw ParseError(os.str());
  }
  std::vector<std::string> rows;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) rows.push_back(line);
  }
  if (rows.empty()) {
    throw ParseError(path + ": no data rows");
  }
  return rows;
}

const std::vector<std::string> kSweepHeader = {
    "coil_index", "current_A", "branch", "pos_x_m", "pos_y_m",
    "pos_z_m",    "Bx_T",      "By_T",   "Bz_T"};
const std::vector<std::string> kGradientHeader = {
    "coil_index", "sample", "pos_x_m", "pos_y_m",
    "pos_z_m",    "Bx_T",   "By_T",    "Bz_T"};

}  // namespace

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void save_json_file(const std::string& path, const json& value) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  out << value.dump(2) << '\n';
}

bool looks_like_array(const json& j) {
  return j.is_object() && j.contains("coils");
}

CoilArray array_from_json(const json& j) {
  const json& coils = require_key(j, "coils", "coil array");
  if (!coils.is_array() || coils.empty()) {
    throw ParseError("coil array: 'coils' must be a non-empty array");
  }
  CoilArray out;
  int index = 0;
  for (const json& cj : coils) {
    std::ostringstream ctx;
    ctx << "coil " << index;
    const std::string c = ctx.str();
    Coil coil;
    coil.centroid = vec3_from(require_key(cj, "centroid_m", c), c + " centroid_m");
    coil.axis = vec3_from(require_key(cj, "axis", c), c + " axis");
    if (std::abs(coil.axis.norm() - 1.0) > 1e-12) {
      throw ParseError(c + ": axis must be unit norm");
    }
    coil.moment_per_amp =
        positive_number(require_key(cj, "moment_per_amp_Am2", c),
                        c + " moment_per_amp_Am2");
    coil.geometry.core_radius = positive_number(
        require_key(cj, "core_radius_m", c), c + " core_radius_m");
    coil.geometry.winding_thickness =
        positive_number(require_key(cj, "winding_thickness_m", c),
                        c + " winding_thickness_m");
    coil.geometry.length =
        positive_number(require_key(cj, "length_m", c), c + " length_m");
    out.coils.push_back(coil);
    ++index;
  }
  out.current_limit =
      j.contains("current_limit")
          ? positive_number(j.at("current_limit"), "coil array current_limit")
          : 1.0;
  if (j.contains("amps_per_unit") && !j.at("amps_per_unit").is_null()) {
    out.amps_per_unit =
        positive_number(j.at("amps_per_unit"), "coil array amps_per_unit");
  }
  return out;
}

json array_to_json(const CoilArray& array) {
  json coils = json::array();
  for (const Coil& coil : array.coils) {
    coils.push_back(json{
        {"centroid_m", {coil.centroid.x(), coil.centroid.y(), coil.centroid.z()}},
        {"axis", {coil.axis.x(), coil.axis.y(), coil.axis.z()}},
        {"moment_per_amp_Am2", coil.moment_per_amp},
        {"core_radius_m", coil.geometry.core_radius},
        {"winding_thickness_m", coil.geometry.winding_thickness},
        {"length_m", coil.geometry.length},
    });
  }
  json out{{"coils", std::move(coils)}, {"current_limit", array.current_limit}};
  if (array.amps_per_unit) out["amps_per_unit"] = *array.amps_per_unit;
  return out;
}

CoilArray load_array(const std::string& path) {
  return array_from_json(load_json_file(path));
}

void save_array(const std::string& path, const CoilArray& array) {
  save_json_file(path, array_to_json(array));
}

ControlMatrix matrix_from_json(const json& j) {
  double scale = 1.0;
  if (j.contains("units")) {
    const std::string units = j.at("units").get<std::string>();
    if (units == "mT_per_A") {
      scale = 1e-3;
    } else if (units != "T_per_unit") {
      throw ParseError("control matrix: unknown units tag '" + units + "'");
    }
  }

  const json& field_rows =
      require_key(j, "rows_field_T_per_unit", "control matrix");
  const json& gradient_rows =
      require_key(j, "rows_gradient_Tpm_per_unit", "control matrix");
  if (!field_rows.is_array() || field_rows.size() != 3) {
    throw ParseError("control matrix: rows_field_T_per_unit must hold 3 rows");
  }
  if (!gradient_rows.is_array() || gradient_rows.size() != 5) {
    throw ParseError(
        "control matrix: rows_gradient_Tpm_per_unit must hold 5 rows");
  }

  ControlMatrix out;
  out.at = vec3_from(require_key(j, "at_m", "control matrix"),
                     "control matrix at_m");

  Eigen::Index cols = -1;
  const auto fill = [&](const json& rows, auto& dest, const char* name) {
    for (Eigen::Index r = 0; r < dest.rows(); ++r) {
      std::ostringstream ctx;
      ctx << "control matrix " << name << " row " << r;
      const std::vector<double> values =
          numbers_from(rows.at(static_cast<std::size_t>(r)), ctx.str());
      if (cols < 0) {
        cols = static_cast<Eigen::Index>(values.size());
        if (cols < 1) throw ParseError(ctx.str() + ": empty row");
        out.rows_field.resize(3, cols);
        out.rows_gradient.resize(5, cols);
      }
      if (static_cast<Eigen::Index>(values.size()) != cols) {
        throw ParseError(ctx.str() + ": inconsistent column count");
      }
      for (Eigen::Index c = 0; c < cols; ++c) {
        dest(r, c) = values[static_cast<std::size_t>(c)] * scale;
      }
    }
  };
  fill(field_rows, out.rows_field, "rows_field_T_per_unit");
  fill(gradient_rows, out.rows_gradient, "rows_gradient_Tpm_per_unit");

  const std::string source =
      require_key(j, "source", "control matrix").get<std::string>();
  if (source == "dipole") {
    out.source = MatrixSource::DipoleModel;
  } else if (source == "calibrated") {
    out.source = MatrixSource::Calibrated;
  } else {
    throw ParseError("control matrix: source must be 'dipole' or 'calibrated'");
  }
  return out;
}

json matrix_to_json(const ControlMatrix& matrix) {
  const auto rows_to_json = [](const auto& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  return json{
      {"at_m", {matrix.at.x(), matrix.at.y(), matrix.at.z()}},
      {"rows_field_T_per_unit", rows_to_json(matrix.rows_field)},
      {"rows_gradient_Tpm_per_unit", rows_to_json(matrix.rows_gradient)},
      {"source",
       matrix.source == MatrixSource::DipoleModel ? "dipole" : "calibrated"},
  };
}

ControlMatrix load_matrix(const std::string& path) {
  return matrix_from_json(load_json_file(path));
}

void save_matrix(const std::string& path, const ControlMatrix& matrix) {
  save_json_file(path, matrix_to_json(matrix));
}

json layout_to_json(const CoilArray& array, const LayoutParams& params) {
  json out = array_to_json(array);
  out["layout_params"] = vec_to_json(params.packed);
  return out;
}

std::pair<CoilArray, LayoutParams> layout_from_json(const json& j) {
  CoilArray array = array_from_json(j);
  if (!j.contains("layout_params")) {
    LayoutParams params = layout_of(array);
    return {std::move(array), std::move(params)};
  }
  const std::vector<double> values =
      numbers_from(j.at("layout_params"), "layout_params");
  if (values.size() != static_cast<std::size_t>(5 * array.size())) {
    std::ostringstream os;
    os << "layout_params: expected " << 5 * array.size() << " values, got "
       << values.size();
    throw ParseError(os.str());
  }
  LayoutParams params(Eigen::Map<const Eigen::VectorXd>(
      values.data(), static_cast<Eigen::Index>(values.size())));
  return {std::move(array), std::move(params)};
}

json field_state_to_json(const FieldState& state) {
  return json{{"b_T", {state.b.x(), state.b.y(), state.b.z()}},
              {"g_Tpm", vec_to_json(state.g)}};
}

json allocation_to_json(const AllocationResult& result) {
  return json{{"currents", vec_to_json(result.currents)},
              {"achieved_b_T", vec_to_json(result.achieved.b)},
              {"achieved_g_Tpm", vec_to_json(result.achieved.g)},
              {"residual", result.residual},
              {"saturated", result.saturated},
              {"pinv_fallback", result.pinv_fallback}};
}

json conditioning_to_json(const ConditioningReport& report) {
  return json{{"singular_values", vec_to_json(report.singular_values)},
              {"sigma_min", report.sigma_min},
              {"sigma_max", report.sigma_max},
              {"condition_number", report.condition_number}};
}

json accessibility_to_json(const AccessibilityReport& report) {
  return json{
      {"apex_angle_deg", report.apex_angle_deg},
      {"axis", {report.axis.x(), report.axis.y(), report.axis.z()}},
      {"resolution", report.resolution}};
}

json coil_fit_to_json(const CoilFit& fit) {
  json out{{"slope_T_per_A", {fit.slope.x(), fit.slope.y(), fit.slope.z()}},
           {"r_squared", fit.r_squared}};
  out["hysteresis_T"] = fit.hysteresis ? json(*fit.hysteresis) : json(nullptr);
  out["saturation_onset_A"] =
      fit.saturation_onset ? json(*fit.saturation_onset) : json(nullptr);
  return out;
}

std::vector<SweepRecord> load_sweep_csv(const std::string& path) {
  const std::vector<std::string> rows = read_csv(path, kSweepHeader);
  std::vector<SweepRecord> out;
  out.reserve(rows.size());
  int line = 1;
  for (const std::string& row : rows) {
    ++line;
    const std::vector<std::string> f = split_fields(row);
    if (f.size() != kSweepHeader.size()) {
      std::ostringstream os;
      os << path << " line " << line << ": expected " << kSweepHeader.size()
         << " fields, got " << f.size();
      throw ParseError(os.str());
    }
    SweepRecord r;
    r.coil_index = parse_int_field(f[0], path, line, "coil_index");
    r.current = parse_double_field(f[1], path, line, "current_A");
    const std::string branch = lowercase(trim(f[2]));
    if (branch == "ascending") {
      r.branch = SweepBranch::Ascending;
    } else if (branch == "descending") {
      r.branch = SweepBranch::Descending;
    } else {
      std::ostringstream os;
      os << path << " line " << line
         << ": field 'branch' must be ascending or descending, got '" << f[2]
         << "'";
      throw ParseError(os.str());
    }
    r.position = Vec3(parse_double_field(f[3], path, line, "pos_x_m"),
                      parse_double_field(f[4], path, line, "pos_y_m"),
                      parse_double_field(f[5], path, line, "pos_z_m"));
    r.b_measured = Vec3(parse_double_field(f[6], path, line, "Bx_T"),
                        parse_double_field(f[7], path, line, "By_T"),
                        parse_double_field(f[8], path, line, "Bz_T"));
    out.push_back(r);
  }
  return out;
}

void save_sweep_csv(const std::string& path,
                    const std::vector<SweepRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  out << "coil_index,current_A,branch,pos_x_m,pos_y_m,pos_z_m,Bx_T,By_T,Bz_T\n";
  for (const SweepRecord& r : records) {
    out << r.coil_index << ',' << format_double(r.current) << ','
        << (r.branch == SweepBranch::Ascending ? "ascending" : "descending");
    for (int k = 0; k < 3; ++k) out << ',' << format_double(r.position(k));
    for (int k = 0; k < 3; ++k) out << ',' << format_double(r.b_measured(k));
    out << '\n';
  }
}

std::vector<GradientSampleSet> load_gradient_csv(const std::string& path) {
  const std::vector<std::string> rows = read_csv(path, kGradientHeader);
  std::map<int, std::map<std::string, FieldSample>> by_coil;
  int line = 1;
  for (const std::string& row : rows) {
    ++line;
    const std::vector<std::string> f = split_fields(row);
    if (f.size() != kGradientHeader.size()) {
      std::ostringstream os;
      os << path << " line " << line << ": expected " << kGradientHeader.size()
         << " fields, got " << f.size();
      throw ParseError(os.str());
    }
    const int coil = parse_int_field(f[0], path, line, "coil_index");
    const std::string tag = lowercase(trim(f[1]));
    if (tag != "base" && tag != "dx" && tag != "dy" && tag != "dz") {
      std::ostringstream os;
      os << path << " line " << line
         << ": field 'sample' must be one of base,dx,dy,dz, got '" << f[1]
         << "'";
      throw ParseError(os.str());
    }
    FieldSample sample;
    sample.position = Vec3(parse_double_field(f[2], path, line, "pos_x_m"),
                           parse_double_field(f[3], path, line, "pos_y_m"),
                           parse_double_field(f[4], path, line, "pos_z_m"));
    sample.b = Vec3(parse_double_field(f[5], path, line, "Bx_T"),
                    parse_double_field(f[6], path, line, "By_T"),
                    parse_double_field(f[7], path, line, "Bz_T"));
    if (!by_coil[coil].emplace(tag, sample).second) {
      std::ostringstream os;
      os << path << " line " << line << ": duplicate sample '" << tag
         << "' for coil " << coil;
      throw ParseError(os.str());
    }
  }

  std::vector<GradientSampleSet> out;
  out.reserve(by_coil.size());
  for (const auto& [coil, samples] : by_coil) {
    for (const char* tag : {"base", "dx", "dy", "dz"}) {
      if (!samples.contains(tag)) {
        std::ostringstream os;
        os << path << ": coil " << coil << " is missing sample '" << tag << "'";
        throw ParseError(os.str());
      }
    }
    GradientSampleSet set;
    set.coil_index = coil;
    set.base = samples.at("base");
    set.dx = samples.at("dx");
    set.dy = samples.at("dy");
    set.dz = samples.at("dz");
    out.push_back(set);
  }
  return out;
}

void save_gradient_csv(const std::string& path,
                       const std::vector<GradientSampleSet>& sets) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  out << "coil_index,sample,pos_x_m,pos_y_m,pos_z_m,Bx_T,By_T,Bz_T\n";
  const auto row = [&](int coil, const char* tag, const FieldSample& s) {
    out << coil << ',' << tag;
    for (int k = 0; k < 3; ++k) out << ',' << format_double(s.position(k));
    for (int k = 0; k < 3; ++k) out << ',' << format_double(s.b(k));
    out << '\n';
  };
  for (const GradientSampleSet& set : sets) {
    row(set.coil_index, "base", set.base);
    row(set.coil_index, "dx", set.dx);
    row(set.coil_index, "dy", set.dy);
    row(set.coil_index, "dz", set.dz);
  }
}

void save_trace_csv(const std::string& path,
                    const std::vector<TracePoint>& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  out << "iter,F,step,max_coil_top_m,min_surface_gap_m\n";
  for (const TracePoint& t : trace) {
    out << t.iter << ',' << format_double(t.objective) << ','
        << format_double(t.step) << ',' << format_double(t.max_coil_top) << ','
        << format_double(t.min_surface_gap) << '\n';
  }
}

std::string format_double(double value) {
  char buffer[32];
  const auto [ptr, ec] =
      std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, ptr);
}

}  // namespace magtable::io
