#include "coreplan/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#ifndef COREPLAN_VERSION_STRING
#define COREPLAN_VERSION_STRING "0.0.0+unknown"
#endif

namespace coreplan::io {
namespace {

Json matrix_to_json(const Matrix& m) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const Json& j, const char* what) {
    require(j.is_array(), std::string(what) + " must be an array of rows");
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        require(j[r].is_array() && static_cast<Eigen::Index>(j[r].size()) == cols,
                std::string(what) + " rows must have equal length");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = j[r][c].get<double>();
    }
    return m;
}

Json vector_to_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector vector_from_json(const Json& j, const char* what) {
    require(j.is_array(), std::string(what) + " must be an array");
    const auto xs = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

template <class T>
T field(const Json& j, const char* key) {
    require(j.is_object() && j.contains(key), std::string("missing field \"") + key + "\"");
    return j.at(key).get<T>();
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double parse_double(const std::string& s) {
    double x = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    require(res.ec == std::errc() && res.ptr == s.data() + s.size(), "trace csv: malformed number \"" + s + "\"");
    return x;
}

void check_hash(const Json& j, const std::string& expected, const std::string& file) {
    if (j.contains("meta") && j["meta"].contains("instance_hash")) {
        const auto h = j["meta"]["instance_hash"].get<std::string>();
        if (h != expected)
            throw IntegrityError(file + ": instance hash " + h + " does not match the instance (" + expected + ")");
    }
}

}  // namespace

std::string version_string() { return COREPLAN_VERSION_STRING; }

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

Json to_json(const Mdp& mdp) {
    return Json{{"num_states", mdp.num_states},
                {"num_actions", mdp.num_actions},
                {"gamma", mdp.gamma},
                {"nu0", vector_to_json(mdp.nu0)},
                {"reward", vector_to_json(mdp.reward)},
                {"transition", matrix_to_json(mdp.transition)}};
}

Mdp mdp_from_json(const Json& j) {
    Mdp mdp;
    mdp.num_states = field<Index>(j, "num_states");
    mdp.num_actions = field<Index>(j, "num_actions");
    mdp.gamma = field<double>(j, "gamma");
    mdp.nu0 = vector_from_json(j.at("nu0"), "nu0");
    mdp.reward = vector_from_json(j.at("reward"), "reward");
    mdp.transition = matrix_from_json(j.at("transition"), "transition");
    mdp.validate();
    return mdp;
}

Json to_json(const FeatureMap& phi) {
    return Json{{"num_pairs", phi.num_pairs()}, {"dim", phi.dim()}, {"radius", phi.radius},
                {"phi", matrix_to_json(phi.phi)}};
}

FeatureMap features_from_json(const Json& j) {
    FeatureMap f;
    f.phi = matrix_from_json(j.at("phi"), "phi");
    f.radius = field<double>(j, "radius");
    require(f.num_pairs() == field<Index>(j, "num_pairs") && f.dim() == field<Index>(j, "dim"),
            "features: declared shape does not match phi");
    f.validate();
    return f;
}

Json to_json(const CoreSet& core) {
    return Json{{"core_indices", core.core_indices}, {"interp", matrix_to_json(core.interp)}};
}

CoreSet coreset_from_json(const Json& j, const FeatureMap& phi) {
    auto idx = field<std::vector<Index>>(j, "core_indices");
    return compute_core_residual(phi, std::move(idx), matrix_from_json(j.at("interp"), "interp"));
}

Json to_json(const LinearMdpWitness& w) {
    return Json{{"w", matrix_to_json(w.w)}, {"vartheta", vector_to_json(w.vartheta)}};
}

LinearMdpWitness witness_from_json(const Json& j) {
    return {matrix_from_json(j.at("w"), "w"), vector_from_json(j.at("vartheta"), "vartheta")};
}

Json to_json(const PlannerConfig& cfg) {
    return Json{{"T", cfg.T},         {"K", cfg.K},
                {"eta", cfg.eta},     {"beta", cfg.beta},
                {"alpha", cfg.alpha}, {"D_gamma", cfg.D_gamma},
                {"seed", cfg.seed},   {"record_trace", cfg.record_trace}};
}

PlannerConfig config_from_json(const Json& j) {
    PlannerConfig cfg;
    cfg.T = field<std::uint64_t>(j, "T");
    cfg.K = field<std::uint64_t>(j, "K");
    cfg.eta = field<double>(j, "eta");
    cfg.beta = field<double>(j, "beta");
    cfg.alpha = field<double>(j, "alpha");
    cfg.D_gamma = field<double>(j, "D_gamma");
    cfg.seed = field<std::uint64_t>(j, "seed");
    cfg.record_trace = j.value("record_trace", true);
    cfg.validate();
    return cfg;
}

std::string instance_hash(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core) {
    const Json j{{"mdp", to_json(mdp)}, {"features", to_json(phi)}, {"coreset", to_json(core)}};
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

Json make_meta(const Json& config, const std::string& hash) {
    return Json{{"version", version_string()}, {"config", config}, {"instance_hash", hash}};
}

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw ContractError(path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const Json& j) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void write_trace_csv(const std::filesystem::path& path, const RunTrace& trace, const Json& meta) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "cannot write " + path.string());
    Json m = meta;
    m["J"] = trace.J;
    m["theta_J"] = vector_to_json(trace.theta_J);
    out << "# meta " << m.dump() << '\n';
    const Index mdim = trace.rounds.empty() ? 0 : trace.rounds.front().lambda.size();
    const Index d = trace.rounds.empty() ? 0 : trace.rounds.front().theta.size();
    out << 't';
    for (Index i = 0; i < mdim; ++i)
        out << ",lambda_" << i;
    for (Index i = 0; i < d; ++i)
        out << ",theta_" << i;
    out << ",transition_queries\n";
    for (std::size_t t = 0; t < trace.rounds.size(); ++t) {
        const RoundRecord& r = trace.rounds[t];
        out << (t + 1);
        for (Eigen::Index i = 0; i < r.lambda.size(); ++i)
            out << ',' << format_double(r.lambda[i]);
        for (Eigen::Index i = 0; i < r.theta.size(); ++i)
            out << ',' << format_double(r.theta[i]);
        out << ',' << r.transition_queries << '\n';
    }
}

LoadedTrace read_trace_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open " + path.string());
    LoadedTrace lt;
    std::string line;
    require(static_cast<bool>(std::getline(in, line)) && line.rfind("# meta ", 0) == 0,
            path.string() + ": missing '# meta' line");
    try {
        lt.meta = Json::parse(line.substr(7));
    } catch (const Json::exception& e) {
        throw ContractError(path.string() + ": bad meta line: " + e.what());
    }
    require(static_cast<bool>(std::getline(in, line)), path.string() + ": missing header");
    Index mdim = 0, d = 0;
    {
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) {
            if (col.rfind("lambda_", 0) == 0)
                ++mdim;
            else if (col.rfind("theta_", 0) == 0)
                ++d;
        }
    }
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        require(cells.size() == 2 + mdim + d, path.string() + ": row has the wrong number of columns");
        RoundRecord r;
        r.lambda.resize(mdim);
        r.theta.resize(d);
        for (Index i = 0; i < mdim; ++i)
            r.lambda[i] = parse_double(cells[1 + i]);
        for (Index i = 0; i < d; ++i)
            r.theta[i] = parse_double(cells[1 + mdim + i]);
        r.transition_queries = std::stoull(cells.back());
        lt.trace.rounds.push_back(std::move(r));
    }
    lt.trace.J = lt.meta.value("J", std::uint64_t{0});
    if (lt.meta.contains("theta_J"))
        lt.trace.theta_J = vector_from_json(lt.meta["theta_J"], "theta_J");
    return lt;
}

InstanceFiles load_instance(const std::filesystem::path& dir) {
    InstanceFiles f;
    const Json jm = read_json(dir / "mdp.json");
    const Json jf = read_json(dir / "features.json");
    const Json jc = read_json(dir / "coreset.json");
    f.mdp = mdp_from_json(jm);
    f.features = features_from_json(jf);
    require(f.features.num_pairs() == f.mdp.num_pairs(), "features.json rows must equal X*A of mdp.json");
    f.core = coreset_from_json(jc, f.features);
    f.hash = instance_hash(f.mdp, f.features, f.core);
    check_hash(jm, f.hash, "mdp.json");
    check_hash(jf, f.hash, "features.json");
    check_hash(jc, f.hash, "coreset.json");
    if (std::filesystem::exists(dir / "witness.json")) {
        const Json jw = read_json(dir / "witness.json");
        check_hash(jw, f.hash, "witness.json");
        f.witness = witness_from_json(jw);
    }
    return f;
}

void save_instance(const std::filesystem::path& dir, const LinearMdpInstance& inst, const Json& config) {
    std::filesystem::create_directories(dir);
    const std::string hash = instance_hash(inst.mdp, inst.features, inst.core);
    const Json meta = make_meta(config, hash);
    Json jm = to_json(inst.mdp), jf = to_json(inst.features), jc = to_json(inst.core), jw = to_json(inst.witness);
    for (Json* j : {&jm, &jf, &jc, &jw})
        (*j)["meta"] = meta;
    write_json(dir / "mdp.json", jm);
    write_json(dir / "features.json", jf);
    write_json(dir / "coreset.json", jc);
    write_json(dir / "witness.json", jw);
}

}  // namespace coreplan::io
