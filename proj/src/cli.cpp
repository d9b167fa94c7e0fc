#include "magtable/cli.hpp"

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "magtable/allocator.hpp"
#include "magtable/calibkit.hpp"
#include "magtable/errors.hpp"
#include "magtable/geomkit.hpp"
#include "magtable/io.hpp"
#include "magtable/layoutopt.hpp"
#include "magtable/magmodel.hpp"
#include "magtable/types.hpp"

namespace magtable::cli {

namespace {

using nlohmann::json;

std::vector<double> parse_number_list(const std::string& text,
                                      const char* what) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ParseError(std::string(what) + ": '" + token +
                       "' is not a number in '" + text + "'");
    }
  }
  if (out.empty()) {
    throw ParseError(std::string(what) + ": empty list '" + text + "'");
  }
  return out;
}

Vec3 parse_triple(const std::string& text, const char* what) {
  const std::vector<double> v = parse_number_list(text, what);
  if (v.size() != 3) {
    throw ParseError(std::string(what) + ": expected 3 numbers, got " +
                     std::to_string(v.size()));
  }
  return Vec3(v[0], v[1], v[2]);
}

struct GridAxis {
  double lo = 0.0, hi = 0.0;
  int count = 1;
};

GridAxis parse_grid_axis(const std::string& text, const char* what) {
  std::vector<std::string> parts;
  std::istringstream in(text);
  std::string token;
  while (std::getline(in, token, ':')) parts.push_back(token);
  if (parts.size() != 3) {
    throw ParseError(std::string(what) + ": expected 'lo:hi:count', got '" +
                     text + "'");
  }
  GridAxis axis;
  try {
    axis.lo = std::stod(parts[0]);
    axis.hi = std::stod(parts[1]);
    axis.count = std::stoi(parts[2]);
  } catch (const std::exception&) {
    throw ParseError(std::string(what) + ": bad numbers in '" + text + "'");
  }
  if (axis.count < 1) {
    throw ParseError(std::string(what) + ": count must be at least 1");
  }
  return axis;
}

double grid_value(const GridAxis& axis, int i) {
  if (axis.count == 1) return axis.lo;
  return axis.lo + (axis.hi - axis.lo) * i / (axis.count - 1);
}

void emit_text(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw Error("cannot write file: " + out_path);
  out << text;
}

void emit_json(const std::string& out_path, const json& value) {
  emit_text(out_path, value.dump(2) + "\n");
}

AllocationMode parse_mode(const std::string& mode) {
  if (mode == "uniform") return AllocationMode::Uniform;
  if (mode == "nonuniform") return AllocationMode::NonUniform;
  throw ParseError("mode must be 'uniform' or 'nonuniform', got '" + mode +
                   "'");
}

struct FieldOptions {
  std::string input, currents, at, grid, out;
};

int run_field(const FieldOptions& opt) {
  if (opt.at.empty() == opt.grid.empty()) {
    std::cerr << "error: exactly one of --at or --grid is required\n";
    return 2;
  }
  const CoilArray array = io::load_array(opt.input);
  const std::vector<double> current_values =
      parse_number_list(opt.currents, "--currents");
  const Eigen::VectorXd currents = Eigen::Map<const Eigen::VectorXd>(
      current_values.data(), static_cast<Eigen::Index>(current_values.size()));

  if (!opt.at.empty()) {
    const FieldState state =
        array_field(array, currents, parse_triple(opt.at, "--at"));
    emit_json(opt.out, io::field_state_to_json(state));
    return 0;
  }

  std::vector<std::string> axes;
  std::istringstream in(opt.grid);
  std::string token;
  while (std::getline(in, token, ';')) axes.push_back(token);
  if (axes.size() != 3) {
    throw ParseError("--grid: expected 'x0:x1:nx;y0:y1:ny;z0:z1:nz'");
  }
  const GridAxis gx = parse_grid_axis(axes[0], "--grid x");
  const GridAxis gy = parse_grid_axis(axes[1], "--grid y");
  const GridAxis gz = parse_grid_axis(axes[2], "--grid z");

  std::ostringstream csv;
  csv << "x_m,y_m,z_m,Bx_T,By_T,Bz_T,Bnorm_T\n";
  for (int ix = 0; ix < gx.count; ++ix) {
    for (int iy = 0; iy < gy.count; ++iy) {
      for (int iz = 0; iz < gz.count; ++iz) {
        const Vec3 p(grid_value(gx, ix), grid_value(gy, iy), grid_value(gz, iz));
        const FieldState state = array_field(array, currents, p);
        csv << io::format_double(p.x()) << ',' << io::format_double(p.y())
            << ',' << io::format_double(p.z()) << ','
            << io::format_double(state.b.x()) << ','
            << io::format_double(state.b.y()) << ','
            << io::format_double(state.b.z()) << ','
            << io::format_double(state.b.norm()) << '\n';
      }
    }
  }
  emit_text(opt.out, csv.str());
  return 0;
}

struct AllocateOptions {
  std::string input, b_mt, b_tesla, mode = "uniform", out;
  double limit = 1.0;
};

int run_allocate(const AllocateOptions& opt) {
  if (opt.b_mt.empty() == opt.b_tesla.empty()) {
    std::cerr << "error: exactly one of --b (mT) or --b-T is required\n";
    return 2;
  }
  const ControlMatrix matrix = io::load_matrix(opt.input);
  const Vec3 b_des = opt.b_mt.empty()
                         ? parse_triple(opt.b_tesla, "--b-T")
                         : Vec3(1e-3 * parse_triple(opt.b_mt, "--b"));
  const AllocationMode mode = parse_mode(opt.mode);
  const AllocationResult result =
      mode == AllocationMode::Uniform
          ? allocate_uniform(matrix, b_des, opt.limit)
          : allocate_nonuniform(matrix, b_des, opt.limit);
  if (result.pinv_fallback) {
    std::cerr << "warning: stack is not 8x8, used the full-stack "
                 "pseudoinverse fallback\n";
  }
  json out = io::allocation_to_json(result);
  out["mode"] = opt.mode;
  emit_json(opt.out, out);
  return 0;
}

struct MaxFieldOptions {
  std::string input, out;
  double limit = 1.0;
};

int run_maxfield(const MaxFieldOptions& opt) {
  const ControlMatrix matrix = io::load_matrix(opt.input);
  json uniform = json::array();
  json nonuniform = json::array();
  json ratio = json::array();
  for (int axis = 0; axis < 3; ++axis) {
    const Vec3 dir = Vec3::Unit(axis);
    const double u = max_field(matrix, dir, AllocationMode::Uniform, opt.limit);
    const double n =
        max_field(matrix, dir, AllocationMode::NonUniform, opt.limit);
    uniform.push_back(u);
    nonuniform.push_back(n);
    ratio.push_back(n / u);
  }
  emit_json(opt.out, json{{"axes", {"x", "y", "z"}},
                          {"uniform_T", uniform},
                          {"nonuniform_T", nonuniform},
                          {"ratio", ratio}});
  return 0;
}

struct OptimizeOptions {
  std::string input, out, trace;
  int random_init = 0;
  bool have_seed = false;
  std::int64_t seed = 0;
  OptimizerConfig config;
};

int run_optimize(const OptimizeOptions& opt) {
  if (opt.input.empty() == (opt.random_init == 0)) {
    std::cerr
        << "error: provide exactly one of an initial layout file or "
           "--random-init\n";
    return 2;
  }
  if (opt.random_init > 0 && !opt.have_seed) {
    std::cerr << "error: --random-init requires --seed\n";
    return 2;
  }

  CoilModel model;
  LayoutParams initial;
  double current_limit = 1.0;
  if (opt.random_init > 0) {
    initial = random_layout(static_cast<std::uint64_t>(opt.seed),
                            opt.random_init, model, opt.config);
  } else {
    auto [array, params] = io::layout_from_json(io::load_json_file(opt.input));
    const Coil& first = array.coils.front();
    for (const Coil& coil : array.coils) {
      const bool same =
          std::abs(coil.moment_per_amp - first.moment_per_amp) <= 1e-12 &&
          std::abs(coil.geometry.core_radius - first.geometry.core_radius) <=
              1e-12 &&
          std::abs(coil.geometry.winding_thickness -
                   first.geometry.winding_thickness) <= 1e-12 &&
          std::abs(coil.geometry.length - first.geometry.length) <= 1e-12;
      if (!same) {
        throw Error(
            "optimize: all coils must share one geometry and moment_per_amp");
      }
    }
    model.moment_per_amp = first.moment_per_amp;
    model.geometry = first.geometry;
    current_limit = array.current_limit;
    initial = std::move(params);
  }

  const LayoutParams projected = project_feasible(initial, model, opt.config);
  int moved = 0;
  for (int i = 0; i < initial.coil_count(); ++i) {
    if (projected.z(i) != initial.z(i)) ++moved;
  }
  if (moved > 0) {
    std::cerr << "note: projected " << moved
              << " coil(s) below the table plane before descent\n";
  }

  const DescentResult result = descend(projected, model, opt.config);

  json out = io::layout_to_json(array_of(result.final_params, model,
                                         current_limit),
                                result.final_params);
  out["converged"] = result.converged;
  out["iterations"] = result.trace.back().iter;
  out["objective"] = result.trace.back().objective;
  emit_json(opt.out, out);
  if (!opt.trace.empty()) io::save_trace_csv(opt.trace, result.trace);
  return 0;
}

struct AnalyzeOptions {
  std::string input, at = "0,0,0", out;
  int resolution = 100000;
};

int run_analyze(const AnalyzeOptions& opt) {
  const json doc = io::load_json_file(opt.input);
  const Vec3 at = parse_triple(opt.at, "--at");
  json out;
  if (io::looks_like_array(doc)) {
    const CoilArray array = io::array_from_json(doc);
    const ControlMatrix matrix = build_control_matrix(array, at);
    out["input"] = "array";
    out["conditioning"] =
        io::conditioning_to_json(conditioning(matrix, ConditioningRows::FieldOnly));
    out["conditioning_full_stack"] =
        io::conditioning_to_json(conditioning(matrix, ConditioningRows::Full));
    out["accessibility"] = io::accessibility_to_json(
        accessibility(coil_obstructions(array), at, opt.resolution));
  } else {
    const ControlMatrix matrix = io::matrix_from_json(doc);
    out["input"] = "matrix";
    out["conditioning"] =
        io::conditioning_to_json(conditioning(matrix, ConditioningRows::FieldOnly));
    out["conditioning_full_stack"] =
        io::conditioning_to_json(conditioning(matrix, ConditioningRows::Full));
  }
  emit_json(opt.out, out);
  return 0;
}

struct CalibrateOptions {
  std::string sweeps, gradients, out, report;
  double amps_per_unit = 0.0;  // 0 = not given
};

int run_calibrate(const CalibrateOptions& opt) {
  const std::vector<SweepRecord> records = io::load_sweep_csv(opt.sweeps);
  const std::vector<io::GradientSampleSet> gradient_sets =
      io::load_gradient_csv(opt.gradients);

  std::map<int, std::vector<SweepRecord>> by_coil;
  for (const SweepRecord& r : records) by_coil[r.coil_index].push_back(r);

  const auto expect_coils = [](const auto& have, const char* what) {
    if (have.size() != 8) {
      std::ostringstream os;
      os << what << " must cover exactly coils 0..7, got " << have.size()
         << " coil(s)";
      throw Error(os.str());
    }
    int expected = 0;
    for (const auto& entry : have) {
      const int coil = [&] {
        if constexpr (std::is_same_v<std::decay_t<decltype(entry)>,
                                     io::GradientSampleSet>) {
          return entry.coil_index;
        } else {
          return entry.first;
        }
      }();
      if (coil != expected) {
        std::ostringstream os;
        os << what << " must cover exactly coils 0..7 (missing coil "
           << expected << ")";
        throw Error(os.str());
      }
      ++expected;
    }
  };
  expect_coils(by_coil, "sweep data");
  expect_coils(gradient_sets, "gradient data");

  const Vec3 at = records.front().position;
  for (const SweepRecord& r : records) {
    if ((r.position - at).norm() > 1e-6) {
      throw Error("calibrate: sweep records span multiple positions");
    }
  }
  for (const io::GradientSampleSet& set : gradient_sets) {
    if ((set.base.position - at).norm() > 1e-6) {
      throw Error(
          "calibrate: gradient base position differs from the sweep position");
    }
  }

  std::vector<CoilFit> fits;
  std::vector<Vec5> gradient_vectors;
  std::vector<double> qualities;
  for (int coil = 0; coil < 8; ++coil) {
    fits.push_back(fit_coil(by_coil.at(coil)));
    const io::GradientSampleSet& set =
        gradient_sets[static_cast<std::size_t>(coil)];
    const GradientFit gfit = fit_gradient(set.base, set.dx, set.dy, set.dz);
    gradient_vectors.push_back(gfit.g);
    qualities.push_back(gfit.asymmetry);
  }

  const std::optional<double> amps_per_unit =
      opt.amps_per_unit > 0.0 ? std::optional<double>(opt.amps_per_unit)
                              : std::nullopt;
  const ControlMatrix matrix =
      assemble_calibrated(fits, gradient_vectors, at, amps_per_unit);
  emit_json(opt.out, io::matrix_to_json(matrix));

  if (!opt.report.empty()) {
    json coils = json::array();
    for (int coil = 0; coil < 8; ++coil) {
      json entry = io::coil_fit_to_json(fits[static_cast<std::size_t>(coil)]);
      entry["coil_index"] = coil;
      entry["gradient_quality"] = qualities[static_cast<std::size_t>(coil)];
      coils.push_back(std::move(entry));
    }
    json report{{"at_m", {at.x(), at.y(), at.z()}},
                {"coils", std::move(coils)}};
    report["amps_per_unit"] =
        amps_per_unit ? json(*amps_per_unit) : json(nullptr);
    io::save_json_file(opt.report, report);
  }
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{
      "Coil-array field simulation, current allocation, layout optimization, "
      "accessibility analysis, and calibration"};
  app.require_subcommand(1);

  FieldOptions field_opt;
  CLI::App* field = app.add_subcommand(
      "field", "Evaluate the dipole-model field of a coil array");
  field->add_option("array", field_opt.input, "Coil array JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  field
      ->add_option("--currents", field_opt.currents,
                   "Comma-separated per-coil currents (normalized units)")
      ->required();
  field->add_option("--at", field_opt.at, "Evaluation point 'x,y,z' (m)");
  field->add_option("--grid", field_opt.grid,
                    "Sample grid 'x0:x1:nx;y0:y1:ny;z0:z1:nz' (m)");
  field->add_option("--out", field_opt.out, "Output path (default stdout)");

  AllocateOptions alloc_opt;
  CLI::App* allocate = app.add_subcommand(
      "allocate", "Solve coil currents for a desired field at a point");
  allocate->add_option("matrix", alloc_opt.input, "Control matrix JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  allocate->add_option("--b", alloc_opt.b_mt, "Desired field 'bx,by,bz' (mT)");
  allocate->add_option("--b-T", alloc_opt.b_tesla,
                       "Desired field 'bx,by,bz' (T)");
  allocate->add_option("--mode", alloc_opt.mode,
                       "Allocation mode: uniform (gradient-free) or "
                       "nonuniform (minimum-norm field only)");
  allocate->add_option("--limit", alloc_opt.limit,
                       "Per-coil current limit (normalized units)");
  allocate->add_option("--out", alloc_opt.out, "Output path (default stdout)");

  MaxFieldOptions maxfield_opt;
  CLI::App* maxfield = app.add_subcommand(
      "maxfield", "Maximum achievable field per axis and mode");
  maxfield->add_option("matrix", maxfield_opt.input, "Control matrix JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  maxfield->add_option("--limit", maxfield_opt.limit,
                       "Per-coil current limit (normalized units)");
  maxfield->add_option("--out", maxfield_opt.out, "Output path (default stdout)");

  OptimizeOptions optimize_opt;
  CLI::App* optimize = app.add_subcommand(
      "optimize", "Gradient-descent layout optimization of a coil array");
  optimize->add_option("initial", optimize_opt.input,
                       "Initial layout JSON file (coil array, optionally with "
                       "a layout_params echo)")
      ->check(CLI::ExistingFile);
  optimize->add_option("--out", optimize_opt.out,
                       "Final layout output path (default stdout)");
  optimize->add_option("--trace", optimize_opt.trace,
                       "Write the descent trace CSV here");
  optimize->add_option("--random-init", optimize_opt.random_init,
                       "Start from a seeded random layout with this many coils");
  CLI::Option* seed_option =
      optimize->add_option("--seed", optimize_opt.seed,
                           "Random-init seed (required with --random-init)");
  optimize->add_option("--step", optimize_opt.config.step, "Descent step");
  optimize->add_option("--fd-step", optimize_opt.config.fd_step,
                       "Finite-difference step");
  optimize->add_option("--stop-tol", optimize_opt.config.stop_tol,
                       "Convergence tolerance on |dF|");
  optimize->add_option("--max-iters", optimize_opt.config.max_iters,
                       "Maximum descent iterations");
  optimize->add_option("--eps-field", optimize_opt.config.eps_field,
                       "Field-effort target magnitude (T)");
  optimize->add_option("--sigma-prox", optimize_opt.config.sigma_prox,
                       "Proximity penalty scale (m)");
  optimize->add_option("--z0", optimize_opt.config.z0,
                       "Height barrier scale (m)");
  optimize->add_option("--table-z", optimize_opt.config.table_plane_z,
                       "Table plane height coil tops must stay below (m)");

  AnalyzeOptions analyze_opt;
  CLI::App* analyze = app.add_subcommand(
      "analyze",
      "Conditioning (and accessibility, for arrays) of a design");
  analyze->add_option("input", analyze_opt.input,
                      "Coil array or control matrix JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  analyze->add_option("--at", analyze_opt.at,
                      "Evaluation point / viewpoint 'x,y,z' (m)");
  analyze->add_option("--resolution", analyze_opt.resolution,
                      "Accessibility direction samples");
  analyze->add_option("--out", analyze_opt.out, "Output path (default stdout)");

  CalibrateOptions calibrate_opt;
  CLI::App* calibrate = app.add_subcommand(
      "calibrate", "Fit a calibrated control matrix from measurement CSVs");
  calibrate->add_option("sweeps", calibrate_opt.sweeps,
                        "Current-sweep CSV (see README for the schema)")
      ->required()
      ->check(CLI::ExistingFile);
  calibrate->add_option("gradients", calibrate_opt.gradients,
                        "Gantry gradient-sample CSV")
      ->required()
      ->check(CLI::ExistingFile);
  calibrate->add_option("--amps-per-unit", calibrate_opt.amps_per_unit,
                        "Scale columns from per-ampere to per-unit current");
  calibrate->add_option("--out", calibrate_opt.out,
                        "Matrix output path (default stdout)");
  calibrate->add_option("--report", calibrate_opt.report,
                        "Write the per-coil fit report JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  optimize_opt.have_seed = seed_option->count() > 0;

  try {
    if (field->parsed()) return run_field(field_opt);
    if (allocate->parsed()) return run_allocate(alloc_opt);
    if (maxfield->parsed()) return run_maxfield(maxfield_opt);
    if (optimize->parsed()) return run_optimize(optimize_opt);
    if (analyze->parsed()) return run_analyze(analyze_opt);
    if (calibrate->parsed()) return run_calibrate(calibrate_opt);
    std::cerr << "error: no command given\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace magtable::cli
