#include "lmflow/io.hpp"

#include "cli_app.hpp"

#include "doctest.h"
#include "test_helpers.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

using namespace lmflow;
namespace lt = lmflow::testing;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
    static const fs::path dir = [] {
        const fs::path p = fs::temp_directory_path() / "lmflow_unit_scratch";
        fs::create_directories(p);
        return p;
    }();
    return (dir / name).string();
}

RunManifest dummy_manifest() {
    RunManifest m;
    m.command = "test";
    m.config["sigma"] = "2";
    return m;
}

}  // namespace

TEST_CASE("landmark CSV round-trips exactly") {
    LandmarkSet set = lt::circle_set(5);
    set.points(0, 0) = 1.0 / 3.0;  // exercise 17-digit formatting
    set.noise_var = Vec(5);
    set.noise_var << 0.1, 0.2, 0.3, 0.4, 1.0 / 7.0;

    const std::string path = scratch("roundtrip.csv");
    write_landmarks_csv(path, set, dummy_manifest());
    const LandmarkSet back = read_landmarks_csv(path);

    REQUIRE(back.size() == 5);
    CHECK(back.labels == set.labels);
    CHECK((back.points - set.points).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.noise_var - set.noise_var).cwiseAbs().maxCoeff() == 0.0);

    // The manifest comment is present and carries valid JSON.
    const std::string text = read_text_file(path);
    CHECK(text.rfind("# manifest: {", 0) == 0);
}

TEST_CASE("landmark CSV accepts 3-D points") {
    LandmarkSet set;
    set.labels = {"p0", "p1"};
    set.points = Mat(2, 3);
    set.points << 1, 2, 3, 4, 5, 6;
    const std::string path = scratch("three_d.csv");
    write_landmarks_csv(path, set, dummy_manifest());
    const LandmarkSet back = read_landmarks_csv(path);
    CHECK(back.dim() == 3);
    CHECK((back.points - set.points).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("landmark CSV parse errors") {
    CHECK_THROWS_AS(parse_landmarks_csv("x,y\n1,2\n", "t"), IoError);
    CHECK_THROWS_AS(parse_landmarks_csv("label,x,y\na,1\n", "t"), IoError);
    CHECK_THROWS_AS(parse_landmarks_csv("label,x,y\na,1,zz\n", "t"), IoError);
    CHECK_THROWS_AS(parse_landmarks_csv("label,x,y\n", "t"), IoError);
    CHECK_THROWS_AS(parse_landmarks_csv("label,x,y,w\na,1,2,3\n", "t"), IoError);
    // noise_var must be positive: caught by set validation.
    CHECK_THROWS_AS(parse_landmarks_csv("label,x,y,noise_var\na,1,2,0\nb,3,4,1\n", "t"),
                    BadShapeParamsError);
    // Comments and blank lines are skipped.
    const LandmarkSet ok = parse_landmarks_csv(
        "# a comment\n\nlabel,x,y\n# another\na,1,2\nb,3,4\n", "t");
    CHECK(ok.size() == 2);
}

TEST_CASE("config parsing: full round trip and errors") {
    RegistrationConfig cfg;
    cfg.sigma = 3.25;
    cfg.eta = 0.5;
    cfg.time_steps = 48;
    cfg.data_weight = 7.0;
    cfg.gradient_mode = GradientMode::paper;
    cfg.max_iters = 77;
    cfg.step_size = 0.125;
    cfg.grad_tolerance = 2e-5;
    cfg.seed = 12345678901234567ull;

    std::string text;
    for (const auto& [k, v] : config_to_map(cfg)) text += k + " = " + v + "\n";
    const RegistrationConfig back = parse_config_text(text, "t");
    CHECK(back.sigma == cfg.sigma);
    CHECK(back.eta == cfg.eta);
    CHECK(back.time_steps == cfg.time_steps);
    CHECK(back.data_weight == cfg.data_weight);
    CHECK(back.gradient_mode == cfg.gradient_mode);
    CHECK(back.max_iters == cfg.max_iters);
    CHECK(back.step_size == cfg.step_size);
    CHECK(back.grad_tolerance == cfg.grad_tolerance);
    CHECK(back.seed == cfg.seed);

    CHECK_THROWS_AS(parse_config_text("sigma 2\n", "t"), IoError);
    CHECK_THROWS_AS(parse_config_text("unknown_key = 1\n", "t"), IoError);
    CHECK_THROWS_AS(parse_config_text("gradient_mode = newton\n", "t"), IoError);
    CHECK(parse_config_text("# only comments\n\n", "t").sigma == 2.0);
}

TEST_CASE("result JSON round-trips a real registration") {
    const LandmarkSet moving = lt::circle_set(4);
    const LandmarkSet fixed_set = lt::flower_set(4, 10.0, 0.1, 2);
    RegistrationConfig cfg;
    cfg.sigma = 3.0;
    cfg.eta = 0.5;
    cfg.time_steps = 8;
    cfg.max_iters = 4;
    const RegistrationResult res = register_landmarks(moving, fixed_set, cfg);

    RunManifest m;
    m.command = "register";
    m.config = config_to_map(cfg);
    m.seed = cfg.seed;
    const std::string path = scratch("result.json");
    write_text_file(path, result_to_json(res, m));

    const LoadedResult back = read_result_json(path);
    CHECK((back.result.mu0 - res.mu0).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.result.residuals_mm - res.residuals_mm).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(back.result.objective_trace.size() == res.objective_trace.size());
    for (size_t i = 0; i < res.objective_trace.size(); ++i)
        CHECK(back.result.objective_trace[i] == res.objective_trace[i]);
    CHECK((back.result.final_state.mean - res.final_state.mean).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK((back.result.final_state.cov - res.final_state.cov).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.result.converged == res.converged);
    CHECK(back.config.at("sigma") == "3");
    CHECK(back.config.at("eta") == "0.5");

    CHECK_THROWS_AS(read_result_json(scratch("missing.json")), IoError);
    write_text_file(scratch("broken.json"), "{\"mu0\": [1, 2]");
    CHECK_THROWS_AS(read_result_json(scratch("broken.json")), IoError);
}

TEST_CASE("fnv1a64 digests match known vectors") {
    CHECK(fnv1a64_hex("") == "cbf29ce484222325");
    CHECK(fnv1a64_hex("a") == "af63dc4c8601ec8c");
    const std::string path = scratch("digest.txt");
    write_text_file(path, "a");
    CHECK(digest_file(path) == "af63dc4c8601ec8c");
}

TEST_CASE("loo CSV carries nan for failed folds") {
    std::vector<LooFold> folds(2);
    folds[0] = {"L000", 1.5, 0.25, 0.75, true};
    folds[1] = {"L001", 2.0, std::numeric_limits<double>::quiet_NaN(),
                std::numeric_limits<double>::quiet_NaN(), false};
    const std::string path = scratch("loo.csv");
    write_loo_csv(path, folds, dummy_manifest());
    const std::string text = read_text_file(path);
    CHECK(text.find("label,pre_mm,post_mm,predicted_fc") != std::string::npos);
    CHECK(text.find("L000,1.5,0.25,0.75") != std::string::npos);
    CHECK(text.find("L001,2,nan,nan") != std::string::npos);
}

TEST_CASE("CLI: synth, register, uncertainty-map, loo pipeline") {
    const std::string circle = scratch("cli_circle.csv");
    const std::string flower = scratch("cli_flower.csv");
    const std::string result = scratch("cli_result.json");
    const std::string fc_csv = scratch("cli_fc.csv");
    const std::string fc_svg = scratch("cli_fc.svg");
    const std::string loo_csv = scratch("cli_loo.csv");
    for (const auto& p : {circle, flower, result, fc_csv, fc_svg, loo_csv})
        fs::remove(p);

    using lmflow::cli::run_command;
    CHECK(run_command({"synth", "--shape", "circle", "--n", "5", "--radius", "10",
                       "--out", circle}) == 0);
    CHECK(run_command({"synth", "--shape", "flower", "--n", "5", "--radius", "10",
                       "--amplitude", "0.15", "--petals", "2", "--out", flower}) == 0);
    CHECK(read_landmarks_csv(circle).size() == 5);

    // Refuses to overwrite without --force; allows with it.
    CHECK(run_command({"synth", "--n", "5", "--out", circle}) == 1);
    CHECK(run_command({"synth", "--n", "5", "--out", circle, "--force"}) == 0);

    const std::vector<std::string> reg_args = {
        "register", "--moving", circle,  "--fixed",     flower, "--sigma", "3",
        "--eta",    "0.4",      "--time-steps", "8",    "--max-iters", "5",
        "--out",    result};
    CHECK(run_command(reg_args) == 0);
    const LoadedResult loaded = read_result_json(result);
    CHECK(loaded.result.mu0.size() == 10);
    CHECK(fs::exists(result + ".manifest.json"));

    // Identical rerun reproduces the file bit-exactly.
    const std::string first = read_text_file(result);
    std::vector<std::string> rerun = reg_args;
    rerun.push_back("--force");
    CHECK(run_command(rerun) == 0);
    CHECK(read_text_file(result) == first);

    CHECK(run_command({"uncertainty-map", "--moving", circle, "--fixed", flower,
                       "--result", result, "--resolution", "5", "--out", fc_csv, "--svg",
                       fc_svg}) == 0);
    const std::string fc_text = read_text_file(fc_csv);
    CHECK(fc_text.find("x,y,fc") != std::string::npos);
    CHECK(std::count(fc_text.begin(), fc_text.end(), '\n') == 27);  // manifest + head + 25
    CHECK(read_text_file(fc_svg).rfind("<svg", 0) == 0);

    CHECK(run_command({"loo", "--moving", circle, "--fixed", flower, "--sigma", "3",
                       "--eta", "0", "--time-steps", "8", "--max-iters", "3", "--out",
                       loo_csv}) == 0);
    CHECK(read_text_file(loo_csv).find("label,pre_mm") != std::string::npos);
}

TEST_CASE("CLI: baseline and validate-ll") {
    const std::string circle = scratch("cli2_circle.csv");
    const std::string flower = scratch("cli2_flower.csv");
    const std::string base_json = scratch("cli2_base.json");
    const std::string vll = scratch("cli2_vll.json");
    for (const auto& p : {circle, flower, base_json, vll}) fs::remove(p);

    using lmflow::cli::run_command;
    CHECK(run_command({"synth", "--n", "6", "--out", circle}) == 0);
    CHECK(run_command({"synth", "--shape", "flower", "--n", "6", "--amplitude", "0.2",
                       "--petals", "2", "--out", flower}) == 0);
    CHECK(run_command({"baseline", "--moving", circle, "--fixed", flower, "--sigma", "2",
                       "--out", base_json}) == 0);
    CHECK(read_result_json(base_json).result.residuals_mm.maxCoeff() < 1e-8);

    CHECK(run_command({"validate-ll", "--n", "6", "--sigma", "5", "--eta", "1",
                       "--samples", "50", "--repeats", "1", "--time-steps", "16", "--out",
                       vll}) == 0);
    CHECK(read_text_file(vll).find("\"aggregate\"") != std::string::npos);
}

TEST_CASE("CLI: usage and failure exit codes") {
    using lmflow::cli::run_command;
    CHECK(run_command({}) == 2);                       // missing subcommand
    CHECK(run_command({"bogus"}) == 2);                // unknown subcommand
    CHECK(run_command({"synth"}) == 2);                // missing required --out
    CHECK(run_command({"synth", "--wat", "1", "--out", scratch("x.csv")}) == 2);
    CHECK(run_command({"--help"}) == 0);
    CHECK(run_command({"--version"}) == 0);

    // Domain failures exit 1.
    CHECK(run_command({"synth", "--n", "2", "--out", scratch("bad.csv")}) == 1);
    CHECK(run_command({"register", "--moving", scratch("nope.csv"), "--fixed",
                       scratch("nope.csv"), "--out", scratch("r.json")}) == 1);

    // Refusing to clobber an input.
    const std::string circle = scratch("cli3_circle.csv");
    fs::remove(circle);
    CHECK(run_command({"synth", "--n", "5", "--out", circle}) == 0);
    CHECK(run_command({"register", "--moving", circle, "--fixed", circle, "--out", circle,
                       "--force"}) == 1);
}
