#include "cli_app.hpp"

#include "lmflow/io.hpp"
#include "lmflow/manifest.hpp"
#include "lmflow/registration.hpp"
#include "lmflow/sde_oracle.hpp"
#include "lmflow/synthetic.hpp"
#include "lmflow/uncertainty.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>

namespace lmflow::cli {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// Output-path guard: never clobber an input, never overwrite without --force.
void check_output(const std::string& out, bool force,
                  const std::vector<std::string>& inputs) {
    const fs::path target = fs::weakly_canonical(fs::path(out));
    for (const auto& in : inputs) {
        if (in.empty()) continue;
        if (fs::weakly_canonical(fs::path(in)) == target)
            throw IoError("output '" + out + "' would overwrite input '" + in + "'");
    }
    if (!force && fs::exists(out))
        throw IoError("output '" + out + "' exists; pass --force to overwrite");
}

void write_sidecar(const std::string& out, const RunManifest& manifest, double seconds,
                   const std::vector<std::string>& outputs) {
    nlohmann::json j;
    j["manifest"] = nlohmann::json::parse(manifest.to_json());
    j["duration_seconds"] = seconds;
    j["outputs"] = outputs;
    write_text_file(out + ".manifest.json", j.dump(2) + "\n");
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Registration-style options shared by register/baseline/loo (and partly by
// validate-ll). A config file loads first; explicit flags override it.
struct ConfigCli {
    std::string config_path;
    double sigma = 0, eta = 0, data_weight = 0, step_size = 0, grad_tolerance = 0;
    int time_steps = 0, max_iters = 0;
    std::uint64_t seed = 0;
    std::string gradient_mode;
};

void add_config_flags(CLI::App* sc, ConfigCli& c) {
    sc->add_option("--config", c.config_path, "flat key=value config file");
    sc->add_option("--sigma", c.sigma, "kernel width (mm)");
    sc->add_option("--eta", c.eta, "diffusion amplitude");
    sc->add_option("--time-steps", c.time_steps, "flow time steps");
    sc->add_option("--data-weight", c.data_weight, "weight of the expected data term");
    sc->add_option("--gradient-mode", c.gradient_mode, "finite_difference | paper")
        ->check(CLI::IsMember({"finite_difference", "paper"}));
    sc->add_option("--max-iters", c.max_iters, "optimizer iteration cap");
    sc->add_option("--step-size", c.step_size, "initial line-search step");
    sc->add_option("--grad-tol", c.grad_tolerance, "gradient infinity-norm stop");
    sc->add_option("--seed", c.seed, "RNG seed recorded in the manifest");
}

RegistrationConfig resolve_config(const CLI::App* sc, const ConfigCli& c) {
    RegistrationConfig cfg;
    if (!c.config_path.empty()) cfg = read_config_file(c.config_path);
    if (sc->count("--sigma")) cfg.sigma = c.sigma;
    if (sc->count("--eta")) cfg.eta = c.eta;
    if (sc->count("--time-steps")) cfg.time_steps = c.time_steps;
    if (sc->count("--data-weight")) cfg.data_weight = c.data_weight;
    if (sc->count("--gradient-mode"))
        cfg.gradient_mode = c.gradient_mode == "paper" ? GradientMode::paper
                                                       : GradientMode::finite_difference;
    if (sc->count("--max-iters")) cfg.max_iters = c.max_iters;
    if (sc->count("--step-size")) cfg.step_size = c.step_size;
    if (sc->count("--grad-tol")) cfg.grad_tolerance = c.grad_tolerance;
    if (sc->count("--seed")) cfg.seed = c.seed;
    return cfg;
}

RunManifest make_manifest(const std::string& command, const RegistrationConfig& cfg,
                          const std::vector<std::string>& inputs) {
    RunManifest m;
    m.command = command;
    m.config = config_to_map(cfg);
    m.seed = cfg.seed;
    for (const auto& p : inputs)
        if (!p.empty()) m.add_input(p);
    return m;
}

double require_number(const std::map<std::string, std::string>& config,
                      const std::string& key, const std::string& origin) {
    const auto it = config.find(key);
    if (it == config.end())
        throw IoError(origin + ": manifest config lacks required key '" + key + "'");
    return std::strtod(it->second.c_str(), nullptr);
}

// ---- synth ----

struct SynthOpts {
    SyntheticConfig shape;
    double noise_var = 0.0;
    std::string out;
    bool force = false;
};

void run_synth(const CLI::App* sc, const SynthOpts& o) {
    const auto start = Clock::now();
    check_output(o.out, o.force, {});
    LandmarkSet set = generate_synthetic(o.shape);
    if (sc->count("--noise-var")) {
        if (!(o.noise_var > 0.0))
            throw BadShapeParamsError("--noise-var must be positive");
        set.noise_var = Vec::Constant(set.size(), o.noise_var);
    }
    RunManifest m;
    m.command = "synth";
    m.config["shape"] = o.shape.shape;
    m.config["n"] = std::to_string(o.shape.n);
    m.config["radius"] = format_double(o.shape.radius);
    m.config["amplitude"] = format_double(o.shape.amplitude);
    m.config["petals"] = std::to_string(o.shape.petals);
    if (set.noise_var.size() != 0) m.config["noise_var"] = format_double(o.noise_var);
    write_landmarks_csv(o.out, set, m);
    const double dur = seconds_since(start);
    write_sidecar(o.out, m, dur, {o.out});
    std::cerr << "synth: wrote " << set.size() << " landmarks to " << o.out << " ("
              << dur << " s)\n";
}

// ---- register / baseline ----

struct RegisterOpts {
    std::string moving, fixed, out;
    ConfigCli config;
    bool force = false;
};

void run_register(const CLI::App* sc, const RegisterOpts& o, bool baseline) {
    const auto start = Clock::now();
    check_output(o.out, o.force, {o.moving, o.fixed, o.config.config_path});
    const LandmarkSet moving = read_landmarks_csv(o.moving);
    const LandmarkSet fixed = read_landmarks_csv(o.fixed);
    const RegistrationConfig cfg = resolve_config(sc, o.config);

    const RegistrationResult result = baseline
                                          ? small_deformation_register(moving, fixed, cfg)
                                          : register_landmarks(moving, fixed, cfg);

    const RunManifest m = make_manifest(baseline ? "baseline" : "register", cfg,
                                        {o.moving, o.fixed, o.config.config_path});
    write_text_file(o.out, result_to_json(result, m));
    const double dur = seconds_since(start);
    write_sidecar(o.out, m, dur, {o.out});

    const double mean_res = result.residuals_mm.size()
                                ? result.residuals_mm.mean()
                                : 0.0;
    std::cerr << (baseline ? "baseline" : "register") << ": "
              << (result.converged ? "converged" : "not converged") << " after "
              << result.iterations << " iteration(s), mean residual " << mean_res
              << " mm, objective " << result.objective_trace.back() << ", jitter events "
              << result.jitter.events << " (" << dur << " s)\n";
}

// ---- validate-ll ----

struct ValidateOpts {
    SyntheticConfig shape;
    double sigma = 2.0;
    double eta = 1.0;
    int time_steps = 64;
    int samples = 200;
    int repeats = 10;
    std::uint64_t seed = 0;
    std::string out;
    bool force = false;
};

void run_validate_ll(const ValidateOpts& o) {
    const auto start = Clock::now();
    check_output(o.out, o.force, {});
    if (o.samples < 2) throw TooFewSamplesError("--samples must be >= 2");
    if (o.repeats < 1) throw BadShapeParamsError("--repeats must be >= 1");
    if (!(o.sigma > 0.0)) throw BadShapeParamsError("--sigma must be positive");
    if (!(o.eta >= 0.0)) throw BadShapeParamsError("--eta must be >= 0");

    const LandmarkSet set = generate_synthetic(o.shape);
    const SquaredExponentialKernel kernel(o.sigma);
    const TimeGrid grid(o.time_steps);

    nlohmann::json per = nlohmann::json::array();
    double mean_acc = 0.0, cov_acc = 0.0, base_acc = 0.0;
    for (int rep = 0; rep < o.repeats; ++rep) {
        const Vec mu = random_protocol_velocity(
            kernel, set.points, o.shape.radius, mix_seed(o.seed, static_cast<std::uint64_t>(rep)));
        const VelocityField field = VelocityField::from_velocities(kernel, set.points, mu);
        const MomentComparison c =
            compare_ll_vs_mc(field, o.eta, set.points, grid, o.samples,
                             mix_seed(o.seed, 1000000ull + static_cast<std::uint64_t>(rep)));
        per.push_back({{"mean_distance", c.mean_distance},
                       {"cov_frobenius_diff", c.cov_frobenius_diff},
                       {"baseline_variance", c.baseline_variance}});
        mean_acc += c.mean_distance;
        cov_acc += c.cov_frobenius_diff;
        base_acc += c.baseline_variance;
    }
    const double inv = 1.0 / o.repeats;

    RunManifest m;
    m.command = "validate-ll";
    m.config["shape"] = o.shape.shape;
    m.config["n"] = std::to_string(o.shape.n);
    m.config["radius"] = format_double(o.shape.radius);
    m.config["amplitude"] = format_double(o.shape.amplitude);
    m.config["petals"] = std::to_string(o.shape.petals);
    m.config["sigma"] = format_double(o.sigma);
    m.config["eta"] = format_double(o.eta);
    m.config["time_steps"] = std::to_string(o.time_steps);
    m.config["samples"] = std::to_string(o.samples);
    m.config["repeats"] = std::to_string(o.repeats);
    m.seed = o.seed;

    nlohmann::json j;
    j["per_repeat"] = per;
    j["aggregate"] = {{"mean_distance", mean_acc * inv},
                      {"cov_frobenius_diff", cov_acc * inv},
                      {"baseline_variance", base_acc * inv}};
    j["n_samples"] = o.samples;
    j["n_steps"] = o.time_steps;
    j["repeats"] = o.repeats;
    j["manifest"] = nlohmann::json::parse(m.to_json());
    write_text_file(o.out, j.dump(2) + "\n");
    const double dur = seconds_since(start);
    write_sidecar(o.out, m, dur, {o.out});
    std::cerr << "validate-ll: mean distance " << mean_acc * inv << " mm, cov diff "
              << cov_acc * inv << " / MC variance " << base_acc * inv << " over "
              << o.repeats << " repeat(s) (" << dur << " s)\n";
}

// ---- uncertainty-map ----

struct MapOpts {
    std::string moving, fixed, result, out, svg;
    std::vector<double> bounds;
    int resolution = 50;
    int chunk = 256;
    bool force = false;
};

void run_uncertainty_map(const MapOpts& o) {
    const auto start = Clock::now();
    std::vector<std::string> inputs = {o.moving, o.fixed, o.result};
    check_output(o.out, o.force, inputs);
    if (!o.svg.empty()) check_output(o.svg, o.force, inputs);

    const LandmarkSet moving = read_landmarks_csv(o.moving);
    const LandmarkSet fixed = read_landmarks_csv(o.fixed);
    const LoadedResult loaded = read_result_json(o.result);
    const int d = moving.dim();

    const double sigma = require_number(loaded.config, "sigma", o.result);
    const double eta = require_number(loaded.config, "eta", o.result);
    const int time_steps =
        static_cast<int>(require_number(loaded.config, "time_steps", o.result));
    if (loaded.result.mu0.size() != static_cast<Eigen::Index>(moving.size()) * d)
        throw DimensionMismatchError(
            "mu0 length in '" + o.result + "' does not match the moving landmark set");

    GridSpec grid_spec;
    grid_spec.resolution = o.resolution;
    if (!o.bounds.empty()) {
        if (static_cast<int>(o.bounds.size()) != 2 * d)
            throw BadShapeParamsError("--bounds needs " + std::to_string(2 * d) +
                                      " numbers: lo..., hi...");
        grid_spec.lo = Vec(d);
        grid_spec.hi = Vec(d);
        for (int i = 0; i < d; ++i) {
            grid_spec.lo[i] = o.bounds[static_cast<size_t>(i)];
            grid_spec.hi[i] = o.bounds[static_cast<size_t>(d + i)];
        }
    } else {
        // Auto bounds: joint bounding box padded by 30% of the largest extent.
        Mat all(moving.size() + fixed.size(), d);
        all.topRows(moving.size()) = moving.points;
        all.bottomRows(fixed.size()) = fixed.points;
        grid_spec.lo = all.colwise().minCoeff().transpose();
        grid_spec.hi = all.colwise().maxCoeff().transpose();
        double extent = (grid_spec.hi - grid_spec.lo).maxCoeff();
        if (!(extent > 0.0)) extent = 1.0;
        grid_spec.lo.array() -= 0.3 * extent;
        grid_spec.hi.array() += 0.3 * extent;
    }
    grid_spec.validate();

    const SquaredExponentialKernel kernel(sigma);
    const VelocityField field =
        VelocityField::from_velocities(kernel, moving.points, loaded.result.mu0);
    const UncertaintyField fc = fc_field(field, eta, moving.points, grid_spec.points(),
                                         TimeGrid(time_steps), o.chunk);

    RunManifest m;
    m.command = "uncertainty-map";
    m.config["sigma"] = format_double(sigma);
    m.config["eta"] = format_double(eta);
    m.config["time_steps"] = std::to_string(time_steps);
    m.config["resolution"] = std::to_string(o.resolution);
    m.config["chunk"] = std::to_string(o.chunk);
    for (int i = 0; i < d; ++i) {
        m.config["lo_" + std::to_string(i)] = format_double(grid_spec.lo[i]);
        m.config["hi_" + std::to_string(i)] = format_double(grid_spec.hi[i]);
    }
    for (const auto& p : inputs) m.add_input(p);
    const auto it = loaded.config.find("seed");
    if (it != loaded.config.end()) m.seed = std::stoull(it->second);

    write_fc_csv(o.out, fc, m);
    std::vector<std::string> outputs = {o.out};
    if (!o.svg.empty()) {
        if (d != 2) throw DimensionMismatchError("--svg requires 2-D landmarks");
        write_fc_svg(o.svg, fc, o.resolution, moving.points, fixed.points);
        outputs.push_back(o.svg);
    }
    const double dur = seconds_since(start);
    write_sidecar(o.out, m, dur, outputs);
    std::cerr << "uncertainty-map: " << fc.fc.size() << " grid points, fc in ["
              << fc.fc.minCoeff() << ", " << fc.fc.maxCoeff() << "] (" << dur << " s)\n";
}

// ---- loo ----

struct LooOpts {
    std::string moving, fixed, out;
    ConfigCli config;
    bool force = false;
};

void run_loo(const CLI::App* sc, const LooOpts& o) {
    const auto start = Clock::now();
    check_output(o.out, o.force, {o.moving, o.fixed, o.config.config_path});
    const LandmarkSet moving = read_landmarks_csv(o.moving);
    const LandmarkSet fixed = read_landmarks_csv(o.fixed);
    const RegistrationConfig cfg = resolve_config(sc, o.config);

    const std::vector<LooFold> folds = loo_validate(moving, fixed, cfg);
    const RunManifest m =
        make_manifest("loo", cfg, {o.moving, o.fixed, o.config.config_path});
    write_loo_csv(o.out, folds, m);
    const double dur = seconds_since(start);
    write_sidecar(o.out, m, dur, {o.out});

    double pre = 0.0, post = 0.0;
    int ok = 0;
    for (const auto& f : folds) {
        if (!f.ok) continue;
        pre += f.pre_mm;
        post += f.post_mm;
        ++ok;
    }
    std::cerr << "loo: " << ok << "/" << folds.size() << " folds ok";
    if (ok > 0)
        std::cerr << ", mean pre " << pre / ok << " mm -> post " << post / ok << " mm";
    std::cerr << " (" << dur << " s)\n";
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"probabilistic diffeomorphic landmark registration"};
    app.name("lmflow");
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    SynthOpts synth;
    auto* sc_synth = app.add_subcommand("synth", "generate a synthetic landmark set");
    sc_synth->add_option("--shape", synth.shape.shape, "circle | flower")
        ->check(CLI::IsMember({"circle", "flower"}));
    sc_synth->add_option("--n", synth.shape.n, "number of landmarks");
    sc_synth->add_option("--radius", synth.shape.radius, "base radius (mm)");
    sc_synth->add_option("--amplitude", synth.shape.amplitude, "flower petal amplitude");
    sc_synth->add_option("--petals", synth.shape.petals, "flower petal count");
    sc_synth->add_option("--noise-var", synth.noise_var,
                         "attach a constant noise_var column (mm^2)");
    sc_synth->add_option("--out", synth.out, "output landmark CSV")->required();
    sc_synth->add_flag("--force", synth.force, "overwrite existing output");
    sc_synth->callback([&] { run_synth(sc_synth, synth); });

    RegisterOpts reg;
    auto* sc_reg = app.add_subcommand(
        "register", "diffeomorphic registration with uncertainty propagation");
    sc_reg->add_option("--moving", reg.moving, "moving landmark CSV")->required();
    sc_reg->add_option("--fixed", reg.fixed, "fixed landmark CSV")->required();
    add_config_flags(sc_reg, reg.config);
    sc_reg->add_option("--out", reg.out, "output result JSON")->required();
    sc_reg->add_flag("--force", reg.force, "overwrite existing output");
    sc_reg->callback([&] { run_register(sc_reg, reg, /*baseline=*/false); });

    RegisterOpts base;
    auto* sc_base =
        app.add_subcommand("baseline", "small-deformation GP-regression baseline");
    sc_base->add_option("--moving", base.moving, "moving landmark CSV")->required();
    sc_base->add_option("--fixed", base.fixed, "fixed landmark CSV")->required();
    add_config_flags(sc_base, base.config);
    sc_base->add_option("--out", base.out, "output result JSON")->required();
    sc_base->add_flag("--force", base.force, "overwrite existing output");
    sc_base->callback([&] { run_register(sc_base, base, /*baseline=*/true); });

    ValidateOpts val;
    auto* sc_val = app.add_subcommand(
        "validate-ll", "compare moment propagation against Monte-Carlo paths");
    sc_val->add_option("--shape", val.shape.shape, "circle | flower")
        ->check(CLI::IsMember({"circle", "flower"}));
    sc_val->add_option("--n", val.shape.n, "number of landmarks");
    sc_val->add_option("--radius", val.shape.radius, "base radius (mm)");
    sc_val->add_option("--amplitude", val.shape.amplitude, "flower petal amplitude");
    sc_val->add_option("--petals", val.shape.petals, "flower petal count");
    sc_val->add_option("--sigma", val.sigma, "kernel width (mm)");
    sc_val->add_option("--eta", val.eta, "diffusion amplitude");
    sc_val->add_option("--time-steps", val.time_steps, "flow time steps");
    sc_val->add_option("--samples", val.samples, "Monte-Carlo sample count");
    sc_val->add_option("--repeats", val.repeats, "random velocity fields to test");
    sc_val->add_option("--seed", val.seed, "RNG seed");
    sc_val->add_option("--out", val.out, "output report JSON")->required();
    sc_val->add_flag("--force", val.force, "overwrite existing output");
    sc_val->callback([&] { run_validate_ll(val); });

    MapOpts map;
    auto* sc_map = app.add_subcommand(
        "uncertainty-map", "evaluate the FC uncertainty field on a grid");
    sc_map->add_option("--moving", map.moving, "moving landmark CSV")->required();
    sc_map->add_option("--fixed", map.fixed, "fixed landmark CSV (overlay/bounds)")
        ->required();
    sc_map->add_option("--result", map.result, "registration result JSON")->required();
    sc_map->add_option("--bounds", map.bounds,
                       "grid bounds: lo per axis then hi per axis (default: auto)");
    sc_map->add_option("--resolution", map.resolution, "grid points per axis");
    sc_map->add_option("--chunk", map.chunk, "queries per propagation");
    sc_map->add_option("--out", map.out, "output grid CSV")->required();
    sc_map->add_option("--svg", map.svg, "optional SVG heatmap (2-D only)");
    sc_map->add_flag("--force", map.force, "overwrite existing outputs");
    sc_map->callback([&] { run_uncertainty_map(map); });

    LooOpts loo;
    auto* sc_loo =
        app.add_subcommand("loo", "leave-one-out validation of predicted uncertainty");
    sc_loo->add_option("--moving", loo.moving, "moving landmark CSV")->required();
    sc_loo->add_option("--fixed", loo.fixed, "fixed landmark CSV")->required();
    add_config_flags(sc_loo, loo.config);
    sc_loo->add_option("--out", loo.out, "output report CSV")->required();
    sc_loo->add_flag("--force", loo.force, "overwrite existing output");
    sc_loo->callback([&] { run_loo(sc_loo, loo); });

    // CLI11's vector parse pops from the back, so feed it reversed.
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace lmflow::cli
