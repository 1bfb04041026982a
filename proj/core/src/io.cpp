#include "lmflow/io.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace lmflow {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

double parse_number(const std::string& token, const std::string& origin, int line_no) {
    const std::string t = trim(token);
    if (t.empty())
        throw IoError(origin + ":" + std::to_string(line_no) + ": empty numeric field");
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size())
        throw IoError(origin + ":" + std::to_string(line_no) + ": bad number '" + t + "'");
    return v;
}

// Content lines (skipping blanks and # comments) paired with 1-based numbers.
std::vector<std::pair<int, std::string>> content_lines(const std::string& text) {
    std::vector<std::pair<int, std::string>> out;
    std::istringstream in(text);
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
        ++no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        out.emplace_back(no, t);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// landmark CSV
// ---------------------------------------------------------------------------

LandmarkSet parse_landmarks_csv(const std::string& text, const std::string& origin) {
    const auto lines = content_lines(text);
    if (lines.empty()) throw IoError(origin + ": no header line");

    const auto header = split(lines.front().second, ',');
    bool has_z = false, has_noise = false;
    const size_t cols = header.size();
    const bool ok_head =
        cols >= 3 && cols <= 5 && header[0] == "label" && header[1] == "x" && header[2] == "y";
    if (!ok_head)
        throw IoError(origin + ":" + std::to_string(lines.front().first) +
                      ": header must be label,x,y[,z][,noise_var]");
    if (cols == 4) {
        if (header[3] == "z")
            has_z = true;
        else if (header[3] == "noise_var")
            has_noise = true;
        else
            throw IoError(origin + ": unexpected column '" + header[3] + "'");
    } else if (cols == 5) {
        if (header[3] != "z" || header[4] != "noise_var")
            throw IoError(origin + ": header must be label,x,y,z,noise_var");
        has_z = has_noise = true;
    }

    const int d = has_z ? 3 : 2;
    const auto n = static_cast<Eigen::Index>(lines.size()) - 1;
    if (n < 1) throw IoError(origin + ": no landmark rows");

    LandmarkSet set;
    set.points.resize(n, d);
    if (has_noise) set.noise_var.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& [no, line] = lines[static_cast<size_t>(i) + 1];
        const auto f = split(line, ',');
        if (f.size() != cols)
            throw IoError(origin + ":" + std::to_string(no) + ": expected " +
                          std::to_string(cols) + " fields, got " + std::to_string(f.size()));
        if (f[0].empty()) throw IoError(origin + ":" + std::to_string(no) + ": empty label");
        set.labels.push_back(f[0]);
        for (int c = 0; c < d; ++c)
            set.points(i, c) = parse_number(f[static_cast<size_t>(c) + 1], origin, no);
        if (has_noise) set.noise_var[i] = parse_number(f[cols - 1], origin, no);
    }
    set.validate();
    return set;
}

LandmarkSet read_landmarks_csv(const std::string& path) {
    return parse_landmarks_csv(read_text_file(path), path);
}

void write_landmarks_csv(const std::string& path, const LandmarkSet& set,
                         const RunManifest& manifest) {
    set.validate();
    const int d = set.dim();
    std::ostringstream out;
    out << "# manifest: " << manifest.to_json() << "\n";
    out << (d == 3 ? "label,x,y,z" : "label,x,y");
    if (set.noise_var.size() != 0) out << ",noise_var";
    out << "\n";
    for (int i = 0; i < set.size(); ++i) {
        out << set.labels[static_cast<size_t>(i)];
        for (int c = 0; c < d; ++c) out << "," << format_double(set.points(i, c));
        if (set.noise_var.size() != 0) out << "," << format_double(set.noise_var[i]);
        out << "\n";
    }
    write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// flat key=value config
// ---------------------------------------------------------------------------

RegistrationConfig parse_config_text(const std::string& text, const std::string& origin) {
    RegistrationConfig config;
    for (const auto& [no, line] : content_lines(text)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw IoError(origin + ":" + std::to_string(no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "sigma") {
            config.sigma = parse_number(value, origin, no);
        } else if (key == "eta") {
            config.eta = parse_number(value, origin, no);
        } else if (key == "time_steps") {
            config.time_steps = static_cast<int>(parse_number(value, origin, no));
        } else if (key == "data_weight") {
            config.data_weight = parse_number(value, origin, no);
        } else if (key == "gradient_mode") {
            if (value == "finite_difference")
                config.gradient_mode = GradientMode::finite_difference;
            else if (value == "paper")
                config.gradient_mode = GradientMode::paper;
            else
                throw IoError(origin + ":" + std::to_string(no) + ": gradient_mode must be " +
                              "finite_difference or paper, got '" + value + "'");
        } else if (key == "max_iters") {
            config.max_iters = static_cast<int>(parse_number(value, origin, no));
        } else if (key == "step_size") {
            config.step_size = parse_number(value, origin, no);
        } else if (key == "grad_tolerance") {
            config.grad_tolerance = parse_number(value, origin, no);
        } else if (key == "seed") {
            try {
                config.seed = std::stoull(value);
            } catch (const std::exception&) {
                throw IoError(origin + ":" + std::to_string(no) + ": bad seed '" + value + "'");
            }
        } else {
            throw IoError(origin + ":" + std::to_string(no) + ": unknown key '" + key + "'");
        }
    }
    return config;
}

RegistrationConfig read_config_file(const std::string& path) {
    return parse_config_text(read_text_file(path), path);
}

std::map<std::string, std::string> config_to_map(const RegistrationConfig& config) {
    std::map<std::string, std::string> m;
    m["sigma"] = format_double(config.sigma);
    m["eta"] = format_double(config.eta);
    m["time_steps"] = std::to_string(config.time_steps);
    m["data_weight"] = format_double(config.data_weight);
    m["gradient_mode"] = config.gradient_mode == GradientMode::paper ? "paper"
                                                                     : "finite_difference";
    m["max_iters"] = std::to_string(config.max_iters);
    m["step_size"] = format_double(config.step_size);
    m["grad_tolerance"] = format_double(config.grad_tolerance);
    m["seed"] = std::to_string(config.seed);
    return m;
}

// ---------------------------------------------------------------------------
// result JSON
// ---------------------------------------------------------------------------

namespace {

nlohmann::json vec_to_json(const Vec& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Vec vec_from_json(const nlohmann::json& a) {
    Vec v(a.size());
    Eigen::Index i = 0;
    for (const auto& x : a) v[i++] = x.get<double>();
    return v;
}

}  // namespace

std::string result_to_json(const RegistrationResult& result, const RunManifest& manifest) {
    nlohmann::json j;
    j["mu0"] = vec_to_json(result.mu0);
    j["residuals_mm"] = vec_to_json(result.residuals_mm);
    j["objective_trace"] = result.objective_trace;
    j["final_mean"] = vec_to_json(result.final_state.mean);
    nlohmann::json cov = nlohmann::json::array();
    for (Eigen::Index r = 0; r < result.final_state.cov.rows(); ++r)
        cov.push_back(vec_to_json(result.final_state.cov.row(r).transpose()));
    j["final_cov"] = cov;
    j["converged"] = result.converged;
    j["manifest"] = nlohmann::json::parse(manifest.to_json());
    return j.dump(2) + "\n";
}

LoadedResult read_result_json(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": bad JSON: " + e.what());
    }
    LoadedResult out;
    try {
        out.result.mu0 = vec_from_json(j.at("mu0"));
        out.result.residuals_mm = vec_from_json(j.at("residuals_mm"));
        out.result.objective_trace = j.at("objective_trace").get<std::vector<double>>();
        out.result.final_state.time = 1.0;
        out.result.final_state.mean = vec_from_json(j.at("final_mean"));
        const auto& cov = j.at("final_cov");
        const auto rows = static_cast<Eigen::Index>(cov.size());
        out.result.final_state.cov.resize(rows, rows);
        for (Eigen::Index r = 0; r < rows; ++r) {
            const Vec row = vec_from_json(cov[static_cast<size_t>(r)]);
            if (row.size() != rows) throw IoError(path + ": final_cov is not square");
            out.result.final_state.cov.row(r) = row.transpose();
        }
        out.result.converged = j.at("converged").get<bool>();
        for (const auto& [k, v] : j.at("manifest").at("config").items())
            out.config[k] = v.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": missing or malformed result field: " + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// FC grid CSV + SVG
// ---------------------------------------------------------------------------

void write_fc_csv(const std::string& path, const UncertaintyField& field,
                  const RunManifest& manifest) {
    const auto d = field.queries.cols();
    if (d != 2 && d != 3) throw DimensionMismatchError("fc grids must be 2-D or 3-D");
    if (field.fc.size() != field.queries.rows())
        throw DimensionMismatchError("fc/query count mismatch");
    std::ostringstream out;
    out << "# manifest: " << manifest.to_json() << "\n";
    out << (d == 3 ? "x,y,z,fc" : "x,y,fc") << "\n";
    for (Eigen::Index i = 0; i < field.queries.rows(); ++i) {
        for (Eigen::Index c = 0; c < d; ++c)
            out << (c ? "," : "") << format_double(field.queries(i, c));
        out << "," << format_double(field.fc[i]) << "\n";
    }
    write_text_file(path, out.str());
}

namespace {

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string fmt3g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

}  // namespace

void write_fc_svg(const std::string& path, const UncertaintyField& field, int resolution,
                  const Mat& moving, const Mat& fixed) {
    if (field.queries.cols() != 2)
        throw DimensionMismatchError("SVG heatmaps are 2-D only");
    if (resolution < 2 ||
        field.queries.rows() != static_cast<Eigen::Index>(resolution) * resolution)
        throw DimensionMismatchError("fc field is not a resolution^2 grid");

    const double lo_x = field.queries.col(0).minCoeff();
    const double hi_x = field.queries.col(0).maxCoeff();
    const double lo_y = field.queries.col(1).minCoeff();
    const double hi_y = field.queries.col(1).maxCoeff();
    const double fc_lo = field.fc.minCoeff();
    const double fc_hi = field.fc.maxCoeff();
    const double fc_span = fc_hi - fc_lo;

    const double margin = 24.0;
    const double panel = 520.0;
    const double cell = panel / resolution;
    const double width = panel + 2 * margin;
    const double height = panel + 2 * margin + 28.0;  // room for the legend line

    auto to_canvas_x = [&](double wx) {
        return margin + (wx - lo_x) / (hi_x - lo_x) * (panel - cell) + cell / 2;
    };
    auto to_canvas_y = [&](double wy) {
        return margin + (hi_y - wy) / (hi_y - lo_y) * (panel - cell) + cell / 2;
    };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt2(width)
        << "\" height=\"" << fmt2(height) << "\" viewBox=\"0 0 " << fmt2(width) << " "
        << fmt2(height) << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // Grid order matches GridSpec::points: axis 0 outer, axis 1 inner.
    for (int ix = 0; ix < resolution; ++ix) {
        for (int iy = 0; iy < resolution; ++iy) {
            const auto idx = static_cast<Eigen::Index>(ix) * resolution + iy;
            const double t = fc_span > 0.0 ? (field.fc[idx] - fc_lo) / fc_span : 0.5;
            const int r = static_cast<int>(245 + t * (31 - 245));
            const int g = static_cast<int>(245 + t * (78 - 245));
            const int b = static_cast<int>(245 + t * (156 - 245));
            const double cx = to_canvas_x(field.queries(idx, 0));
            const double cy = to_canvas_y(field.queries(idx, 1));
            out << "<rect x=\"" << fmt2(cx - cell / 2) << "\" y=\"" << fmt2(cy - cell / 2)
                << "\" width=\"" << fmt2(cell + 0.5) << "\" height=\"" << fmt2(cell + 0.5)
                << "\" fill=\"rgb(" << r << "," << g << "," << b << ")\"/>\n";
        }
    }

    for (Eigen::Index i = 0; i < moving.rows(); ++i) {
        out << "<circle cx=\"" << fmt2(to_canvas_x(moving(i, 0))) << "\" cy=\""
            << fmt2(to_canvas_y(moving(i, 1)))
            << "\" r=\"3.5\" fill=\"none\" stroke=\"#1e7a1e\" stroke-width=\"1.6\"/>\n";
    }
    for (Eigen::Index i = 0; i < fixed.rows(); ++i) {
        const double cx = to_canvas_x(fixed(i, 0));
        const double cy = to_canvas_y(fixed(i, 1));
        out << "<path d=\"M " << fmt2(cx - 3) << " " << fmt2(cy - 3) << " L " << fmt2(cx + 3)
            << " " << fmt2(cy + 3) << " M " << fmt2(cx - 3) << " " << fmt2(cy + 3) << " L "
            << fmt2(cx + 3) << " " << fmt2(cy - 3)
            << "\" stroke=\"#333333\" stroke-width=\"1.6\" fill=\"none\"/>\n";
    }

    out << "<text x=\"" << fmt2(margin) << "\" y=\"" << fmt2(height - 10.0)
        << "\" font-family=\"sans-serif\" font-size=\"13\" fill=\"#222222\">fc: "
        << fmt3g(fc_lo) << " (grey) to " << fmt3g(fc_hi)
        << " (blue); o moving, x fixed</text>\n";
    out << "</svg>\n";
    write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// LOO CSV
// ---------------------------------------------------------------------------

void write_loo_csv(const std::string& path, const std::vector<LooFold>& folds,
                   const RunManifest& manifest) {
    std::ostringstream out;
    out << "# manifest: " << manifest.to_json() << "\n";
    out << "label,pre_mm,post_mm,predicted_fc\n";
    for (const auto& fold : folds) {
        out << fold.label << "," << format_double(fold.pre_mm) << ","
            << format_double(fold.post_mm) << "," << format_double(fold.predicted_fc)
            << "\n";
    }
    write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("read failed for '" + path + "'");
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << content;
    out.flush();
    if (!out.good()) throw IoError("write failed for '" + path + "'");
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace lmflow
