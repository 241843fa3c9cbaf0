#pragma once

/// Configuration-driven experiment campaigns. A campaign config declares the
/// case datasets (geometry, boundary conditions, injection matrix, meshes)
/// and a list of train/test studies; running it stages every pipeline
/// artifact on disk — solved snapshots (through a content-addressed cache),
/// error databases, similarity reports, trained surrogates, corrected fields
/// and the final accuracy-vs-similarity trend table — plus a manifest that
/// records inputs, seeds, versions and per-stage timings.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fsm/case_spec.hpp"
#include "fsm/dfnn.hpp"
#include "fsm/error_db.hpp"
#include "fsm/evaluate.hpp"
#include "fsm/features.hpp"
#include "fsm/kde.hpp"
#include "fsm/parallel.hpp"
#include "fsm/plots.hpp"
#include "fsm/snapshot.hpp"
#include "fsm/solver.hpp"
#include "fsm/tsne.hpp"
#include "fsm/util.hpp"

namespace fsm {

/// Bumped whenever solver numerics or the snapshot schema change, so stale
/// cache entries are never reused.
inline constexpr int kPipelineSchema = 1;

inline constexpr const char* kOutRootEnv = "FSM_OUT_ROOT";
inline constexpr std::uint64_t kDefaultCampaignSeed = 0x9e3779b97f4a7c15ull;

struct DatasetSpec {
    std::string label;
    double length = 1.0, height = 1.0;
    int fine_nx = 0, fine_ny = 0;
    std::vector<double> coarse_sizes;  // cell spacings (m)
    std::vector<CaseSpec> cases;
};

struct SimilaritySettings {
    PccThresholds thresholds;
    KdeOptions kde;
};

struct ProjectionSettings {
    bool enabled = false;
    TsneOptions options;
};

struct TestSpec {
    std::string id;
    std::string train, test;  // selector strings, e.g. "A:6-8" or "B+C"
    FeatureVariant variant = FeatureVariant::dimensional;
    TrainConfig surrogate;
    bool surrogate_seed_explicit = false;  // else derived from the campaign seed
    SimilaritySettings similarity;
    ProjectionSettings projection;

    std::string key() const { return id + "_" + to_string(variant); }
};

struct CampaignConfig {
    std::string name;
    std::uint64_t seed = kDefaultCampaignSeed;
    std::string output;  // default output directory (may be relative)
    std::string cache;   // solve-cache directory shared between campaigns
    double low_tolerance = 1e-5;
    double high_tolerance = 1e-4;
    int max_outer_iterations = 30000;
    std::vector<DatasetSpec> datasets;
    std::vector<TestSpec> tests;
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& where, const std::string& msg) {
    throw std::runtime_error("config " + where + ": " + msg);
}

inline void check_keys(const nlohmann::json& obj, const std::string& where,
                       std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) config_error(where + "." + key, "unknown field");
    }
}

inline const nlohmann::json& field(const nlohmann::json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) config_error(where + "." + key, "missing required field");
    return *it;
}

inline double num_field(const nlohmann::json& obj, const char* key, const std::string& where) {
    const nlohmann::json& v = field(obj, key, where);
    if (!v.is_number()) config_error(where + "." + key, "expected a number");
    return v.get<double>();
}

inline double num_or(const nlohmann::json& obj, const char* key, const std::string& where, double def) {
    auto it = obj.find(key);
    if (it == obj.end()) return def;
    if (!it->is_number()) config_error(where + "." + key, "expected a number");
    return it->get<double>();
}

inline long int_or(const nlohmann::json& obj, const char* key, const std::string& where, long def) {
    auto it = obj.find(key);
    if (it == obj.end()) return def;
    if (!it->is_number_integer()) config_error(where + "." + key, "expected an integer");
    return it->get<long>();
}

inline std::string str_field(const nlohmann::json& obj, const char* key, const std::string& where) {
    const nlohmann::json& v = field(obj, key, where);
    if (!v.is_string()) config_error(where + "." + key, "expected a string");
    return v.get<std::string>();
}

inline std::string str_or(const nlohmann::json& obj, const char* key, const std::string& where,
                          const std::string& def) {
    auto it = obj.find(key);
    if (it == obj.end()) return def;
    if (!it->is_string()) config_error(where + "." + key, "expected a string");
    return it->get<std::string>();
}

// Mesh spacings may be written as numbers or exact fraction strings ("1/15").
inline double mesh_size_value(const nlohmann::json& v, const std::string& where) {
    if (v.is_number()) {
        double h = v.get<double>();
        if (!(h > 0.0)) config_error(where, "mesh size must be positive");
        return h;
    }
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        const auto slash = s.find('/');
        double h = 0.0;
        if (slash == std::string::npos) {
            h = parse_double(s, where);
        } else {
            const double a = parse_double(s.substr(0, slash), where);
            const double b = parse_double(s.substr(slash + 1), where);
            if (b == 0.0) config_error(where, "mesh size denominator is zero");
            h = a / b;
        }
        if (!(h > 0.0)) config_error(where, "mesh size must be positive");
        return h;
    }
    config_error(where, "expected a number or a fraction string");
}

inline std::string two_digit(int n) { return (n < 10 ? "0" : "") + std::to_string(n); }

inline std::uint64_t derive_seed(std::uint64_t base, const std::string& tag) {
    return fnv1a(tag, base ^ 0x6a09e667f3bcc908ull);
}

inline TrainConfig surrogate_from_json(const nlohmann::json& obj, const std::string& where, TrainConfig base,
                                       bool* seed_explicit) {
    if (!obj.is_object()) config_error(where, "expected an object");
    check_keys(obj, where,
               {"hidden", "activation", "max_epochs", "max_rows", "seed", "validation_fraction", "tolerance"});
    if (auto it = obj.find("hidden"); it != obj.end()) {
        if (!it->is_array() || it->empty()) config_error(where + ".hidden", "expected a non-empty array");
        base.hidden.clear();
        for (std::size_t i = 0; i < it->size(); ++i) {
            const nlohmann::json& layer = (*it)[i];
            if (!layer.is_number_integer() || layer.get<long>() < 1)
                config_error(where + ".hidden[" + std::to_string(i) + "]", "layer width must be a positive integer");
            base.hidden.push_back(layer.get<int>());
        }
    }
    base.activation = str_or(obj, "activation", where, base.activation);
    base.max_epochs = static_cast<int>(int_or(obj, "max_epochs", where, base.max_epochs));
    base.max_rows = int_or(obj, "max_rows", where, base.max_rows);
    base.tolerance = num_or(obj, "tolerance", where, base.tolerance);
    base.validation_fraction = num_or(obj, "validation_fraction", where, base.validation_fraction);
    if (auto it = obj.find("seed"); it != obj.end()) {
        if (!it->is_number_integer()) config_error(where + ".seed", "expected an integer");
        base.seed = it->get<std::uint64_t>();
        if (seed_explicit) *seed_explicit = true;
    }
    if (base.max_rows < 0) config_error(where + ".max_rows", "must be >= 0");
    try {
        base.validate();
    } catch (const std::exception& e) {
        config_error(where, e.what());
    }
    return base;
}

inline SimilaritySettings similarity_from_json(const nlohmann::json& obj, const std::string& where,
                                               SimilaritySettings base) {
    if (!obj.is_object()) config_error(where, "expected an object");
    check_keys(obj, where, {"self_quantile", "extrapolation_fraction", "max_train_rows"});
    base.thresholds.self_quantile = num_or(obj, "self_quantile", where, base.thresholds.self_quantile);
    base.thresholds.extrapolation_fraction =
        num_or(obj, "extrapolation_fraction", where, base.thresholds.extrapolation_fraction);
    base.kde.max_train_rows = int_or(obj, "max_train_rows", where, base.kde.max_train_rows);
    if (!(base.thresholds.self_quantile > 0.0 && base.thresholds.self_quantile <= 1.0))
        config_error(where + ".self_quantile", "must lie in (0, 1]");
    if (!(base.thresholds.extrapolation_fraction >= 0.0 && base.thresholds.extrapolation_fraction <= 1.0))
        config_error(where + ".extrapolation_fraction", "must lie in [0, 1]");
    if (base.kde.max_train_rows < 2) config_error(where + ".max_train_rows", "must be >= 2");
    return base;
}

inline ProjectionSettings projection_from_json(const nlohmann::json& obj, const std::string& where,
                                               ProjectionSettings base) {
    if (!obj.is_object()) config_error(where, "expected an object");
    check_keys(obj, where, {"enabled", "perplexity", "iterations", "max_rows", "learning_rate"});
    if (auto it = obj.find("enabled"); it != obj.end()) {
        if (!it->is_boolean()) config_error(where + ".enabled", "expected a boolean");
        base.enabled = it->get<bool>();
    }
    base.options.perplexity = num_or(obj, "perplexity", where, base.options.perplexity);
    base.options.iterations = static_cast<int>(int_or(obj, "iterations", where, base.options.iterations));
    base.options.max_rows = static_cast<int>(int_or(obj, "max_rows", where, base.options.max_rows));
    base.options.learning_rate = num_or(obj, "learning_rate", where, base.options.learning_rate);
    try {
        base.options.validate();
    } catch (const std::exception& e) {
        config_error(where, e.what());
    }
    return base;
}

inline DatasetSpec dataset_from_json(const nlohmann::json& obj, const std::string& where) {
    if (!obj.is_object()) config_error(where, "expected an object");
    check_keys(obj, where,
               {"label", "length", "height", "fine", "coarse_mesh_sizes", "top_wall", "inlet", "vent", "cases"});
    DatasetSpec ds;
    ds.label = str_field(obj, "label", where);
    if (ds.label.empty() || ds.label.find_first_of(" \t+:-/") != std::string::npos)
        config_error(where + ".label", "label must be non-empty and free of '+', ':', '-', '/' and spaces");
    ds.length = num_field(obj, "length", where);
    ds.height = num_field(obj, "height", where);
    if (!(ds.length > 0.0) || !(ds.height > 0.0)) config_error(where, "length and height must be positive");

    const nlohmann::json& fine = field(obj, "fine", where);
    if (!fine.is_array() || fine.size() != 2 || !fine[0].is_number_integer() || !fine[1].is_number_integer())
        config_error(where + ".fine", "expected [nx, ny]");
    ds.fine_nx = fine[0].get<int>();
    ds.fine_ny = fine[1].get<int>();
    if (ds.fine_nx < 3 || ds.fine_ny < 3) config_error(where + ".fine", "fine grid must be at least 3x3");

    const nlohmann::json& coarse = field(obj, "coarse_mesh_sizes", where);
    if (!coarse.is_array() || coarse.empty()) config_error(where + ".coarse_mesh_sizes", "expected a non-empty array");
    for (std::size_t i = 0; i < coarse.size(); ++i)
        ds.coarse_sizes.push_back(
            mesh_size_value(coarse[i], where + ".coarse_mesh_sizes[" + std::to_string(i) + "]"));

    const nlohmann::json& top = field(obj, "top_wall", where);
    check_keys(top, where + ".top_wall", {"mode", "temperature_c", "flux_w_m2"});
    const std::string mode = str_field(top, "mode", where + ".top_wall");
    TopWallMode top_mode = TopWallMode::fixed_temperature;
    double t_top = 0.0, q_top = 0.0;
    try {
        top_mode = top_mode_from_string(mode);
    } catch (const std::exception& e) {
        config_error(where + ".top_wall.mode", e.what());
    }
    if (top_mode == TopWallMode::fixed_temperature)
        t_top = celsius_to_kelvin(num_field(top, "temperature_c", where + ".top_wall"));
    else
        q_top = num_field(top, "flux_w_m2", where + ".top_wall");

    auto opening = [&](const char* key, Side& side, double& lo, double& hi) {
        const nlohmann::json& o = field(obj, key, where);
        const std::string w = where + "." + key;
        check_keys(o, w, {"side", "from", "to"});
        try {
            side = side_from_string(str_field(o, "side", w));
        } catch (const std::exception& e) {
            config_error(w + ".side", e.what());
        }
        lo = num_field(o, "from", w);
        hi = num_field(o, "to", w);
        if (!(hi > lo)) config_error(w, "'to' must exceed 'from'");
    };
    Side inlet_side = Side::left, vent_side = Side::right;
    double inlet_lo = 0.0, inlet_hi = 0.0, vent_lo = 0.0, vent_hi = 0.0;
    opening("inlet", inlet_side, inlet_lo, inlet_hi);
    opening("vent", vent_side, vent_lo, vent_hi);

    const nlohmann::json& cases = field(obj, "cases", where);
    if (!cases.is_array() || cases.empty()) config_error(where + ".cases", "expected a non-empty array");
    if (cases.size() > 99) config_error(where + ".cases", "at most 99 cases per dataset");
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const std::string cw = where + ".cases[" + std::to_string(i) + "]";
        const nlohmann::json& c = cases[i];
        if (!c.is_object()) config_error(cw, "expected an object");
        check_keys(c, cw, {"injection_temperature_c", "injection_rate"});
        CaseSpec cs;
        cs.id = ds.label + "-" + two_digit(static_cast<int>(i) + 1);
        cs.dataset = ds.label;
        cs.length = ds.length;
        cs.height = ds.height;
        cs.top_mode = top_mode;
        cs.t_top = top_mode == TopWallMode::fixed_temperature ? t_top : cs.t_top;
        cs.q_top = q_top;
        cs.t_inj = celsius_to_kelvin(num_field(c, "injection_temperature_c", cw));
        cs.u_inj = num_field(c, "injection_rate", cw);
        cs.inlet_side = inlet_side;
        cs.inlet_lo = inlet_lo;
        cs.inlet_hi = inlet_hi;
        cs.vent_side = vent_side;
        cs.vent_lo = vent_lo;
        cs.vent_hi = vent_hi;
        try {
            cs.validate();
        } catch (const std::exception& e) {
            config_error(cw, e.what());
        }
        ds.cases.push_back(std::move(cs));
    }

    // every coarse spacing must tile the dataset geometry, and the fine grid
    // must nest onto it so reference fields can be projected cell-exactly
    for (std::size_t i = 0; i < ds.coarse_sizes.size(); ++i) {
        const std::string cw = where + ".coarse_mesh_sizes[" + std::to_string(i) + "]";
        StructuredGrid2D g;
        try {
            g = grid_for_mesh_size(ds.cases.front(), ds.coarse_sizes[i]);
        } catch (const std::exception& e) {
            config_error(cw, e.what());
        }
        if (ds.fine_nx % g.nx() != 0 || ds.fine_ny % g.ny() != 0)
            config_error(cw, "fine grid " + std::to_string(ds.fine_nx) + "x" + std::to_string(ds.fine_ny) +
                                 " does not nest onto the " + std::to_string(g.nx()) + "x" +
                                 std::to_string(g.ny()) + " coarse grid");
    }
    return ds;
}

// Expands a '+'-joined selector into the case ids it covers, validating every
// referenced label, ordinal range and case id against the dataset list.
inline std::set<std::string> expand_selector(const std::string& text, const std::vector<DatasetSpec>& datasets,
                                             const std::string& where) {
    if (text.empty()) config_error(where, "empty selection");
    std::map<std::string, const DatasetSpec*> by_label;
    std::set<std::string> all_ids;
    for (const auto& d : datasets) {
        by_label[d.label] = &d;
        for (const auto& c : d.cases) all_ids.insert(c.id);
    }
    std::set<std::string> out;
    for (const std::string& item : split_char(text, '+')) {
        Selector sel;
        try {
            sel = parse_selector(trim(item));
        } catch (const std::exception& e) {
            config_error(where, e.what());
        }
        if (sel.is_case_id) {
            if (!all_ids.count(sel.label)) config_error(where, "unknown case id '" + sel.label + "'");
            out.insert(sel.label);
            continue;
        }
        auto it = by_label.find(sel.label);
        if (it == by_label.end()) config_error(where, "unknown dataset '" + sel.label + "'");
        const auto& cases = it->second->cases;
        if (!sel.has_range) {
            for (const auto& c : cases) out.insert(c.id);
            continue;
        }
        if (sel.lo < 1 || sel.hi > static_cast<long>(cases.size()))
            config_error(where, "range " + std::to_string(sel.lo) + "-" + std::to_string(sel.hi) + " exceeds the " +
                                    std::to_string(cases.size()) + " cases of dataset '" + sel.label + "'");
        for (long k = sel.lo; k <= sel.hi; ++k) out.insert(cases[static_cast<std::size_t>(k - 1)].id);
    }
    return out;
}

}  // namespace detail

/// Parses and cross-validates a campaign config document. Defaults are
/// filled, labels and selections resolved, and every error names the field.
inline CampaignConfig parse_campaign_config(const nlohmann::json& doc, const std::string& source) {
    using namespace detail;
    if (!doc.is_object()) config_error(source, "top level must be an object");
    check_keys(doc, source,
               {"name", "seed", "output", "cache", "solver", "surrogate", "similarity", "projection", "datasets",
                "tests"});
    CampaignConfig cfg;
    cfg.name = str_field(doc, "name", source);
    if (cfg.name.empty() || cfg.name.find_first_of(" \t/") != std::string::npos)
        config_error(source + ".name", "name must be non-empty and free of spaces and '/'");
    if (auto it = doc.find("seed"); it != doc.end()) {
        if (!it->is_number_integer()) config_error(source + ".seed", "expected an integer");
        cfg.seed = it->get<std::uint64_t>();
    }
    cfg.output = str_or(doc, "output", source, "");
    cfg.cache = str_or(doc, "cache", source, "");

    if (auto it = doc.find("solver"); it != doc.end()) {
        check_keys(*it, source + ".solver", {"low_tolerance", "high_tolerance", "max_outer_iterations"});
        cfg.low_tolerance = num_or(*it, "low_tolerance", source + ".solver", cfg.low_tolerance);
        cfg.high_tolerance = num_or(*it, "high_tolerance", source + ".solver", cfg.high_tolerance);
        cfg.max_outer_iterations =
            static_cast<int>(int_or(*it, "max_outer_iterations", source + ".solver", cfg.max_outer_iterations));
        if (!(cfg.low_tolerance > 0.0) || !(cfg.high_tolerance > 0.0))
            config_error(source + ".solver", "tolerances must be positive");
        if (cfg.max_outer_iterations < 1) config_error(source + ".solver.max_outer_iterations", "must be >= 1");
    }

    TrainConfig surrogate_base;
    surrogate_base.hidden = {12, 12};
    surrogate_base.max_epochs = 150;
    bool base_seed_explicit = false;
    if (auto it = doc.find("surrogate"); it != doc.end())
        surrogate_base = surrogate_from_json(*it, source + ".surrogate", surrogate_base, &base_seed_explicit);
    SimilaritySettings similarity_base;
    if (auto it = doc.find("similarity"); it != doc.end())
        similarity_base = similarity_from_json(*it, source + ".similarity", similarity_base);
    ProjectionSettings projection_base;
    if (auto it = doc.find("projection"); it != doc.end())
        projection_base = projection_from_json(*it, source + ".projection", projection_base);

    const nlohmann::json& datasets = field(doc, "datasets", source);
    if (!datasets.is_array() || datasets.empty()) config_error(source + ".datasets", "expected a non-empty array");
    std::set<std::string> labels;
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        DatasetSpec ds = dataset_from_json(datasets[i], source + ".datasets[" + std::to_string(i) + "]");
        if (!labels.insert(ds.label).second)
            config_error(source + ".datasets[" + std::to_string(i) + "].label",
                         "duplicate dataset label '" + ds.label + "'");
        cfg.datasets.push_back(std::move(ds));
    }

    const nlohmann::json& tests = field(doc, "tests", source);
    if (!tests.is_array()) config_error(source + ".tests", "expected an array");
    if (tests.size() < 3) config_error(source + ".tests", "a campaign trend needs at least 3 tests");
    std::set<std::string> keys;
    for (std::size_t i = 0; i < tests.size(); ++i) {
        const std::string where = source + ".tests[" + std::to_string(i) + "]";
        const nlohmann::json& t = tests[i];
        if (!t.is_object()) config_error(where, "expected an object");
        check_keys(t, where, {"id", "train", "test", "variant", "surrogate", "similarity", "projection"});
        TestSpec ts;
        ts.id = str_field(t, "id", where);
        if (ts.id.empty() || ts.id.find_first_not_of(
                                 "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-") !=
                                 std::string::npos)
            config_error(where + ".id", "test ids may only use letters, digits, '_' and '-'");
        ts.train = str_field(t, "train", where);
        ts.test = str_field(t, "test", where);
        try {
            ts.variant = variant_from_string(str_or(t, "variant", where, "dimensional"));
        } catch (const std::exception& e) {
            config_error(where + ".variant", e.what());
        }
        ts.surrogate = surrogate_base;
        ts.surrogate_seed_explicit = base_seed_explicit;
        if (auto it = t.find("surrogate"); it != t.end())
            ts.surrogate = detail::surrogate_from_json(*it, where + ".surrogate", ts.surrogate,
                                                       &ts.surrogate_seed_explicit);
        ts.similarity = similarity_base;
        if (auto it = t.find("similarity"); it != t.end())
            ts.similarity = detail::similarity_from_json(*it, where + ".similarity", ts.similarity);
        ts.projection = projection_base;
        if (auto it = t.find("projection"); it != t.end())
            ts.projection = detail::projection_from_json(*it, where + ".projection", ts.projection);

        const auto train_ids = detail::expand_selector(ts.train, cfg.datasets, where + ".train");
        const auto test_ids = detail::expand_selector(ts.test, cfg.datasets, where + ".test");
        for (const auto& id : test_ids)
            if (train_ids.count(id))
                config_error(where, "train and test selections overlap on case '" + id + "'");
        if (!keys.insert(ts.key()).second)
            config_error(where, "duplicate test id '" + ts.id + "' for variant " + to_string(ts.variant));
        cfg.tests.push_back(std::move(ts));
    }
    return cfg;
}

/// Loads, parses and validates a campaign config file (see
/// parse_campaign_config); errors carry the file path and the field path.
inline CampaignConfig load_campaign_config(const std::string& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const std::exception& e) {
        throw std::runtime_error("config " + path + ": " + e.what());
    }
    return parse_campaign_config(doc, path);
}

/// Normalized echo of a validated config: defaults filled, case ids and
/// derived seeds resolved. Deterministic (keys sorted, no timestamps).
inline nlohmann::json normalized_config_json(const CampaignConfig& cfg) {
    nlohmann::json doc;
    doc["name"] = cfg.name;
    doc["seed"] = cfg.seed;
    doc["output"] = cfg.output;
    doc["cache"] = cfg.cache;
    doc["schema"] = kPipelineSchema;
    doc["solver"] = {{"low_tolerance", cfg.low_tolerance},
                     {"high_tolerance", cfg.high_tolerance},
                     {"max_outer_iterations", cfg.max_outer_iterations}};
    doc["datasets"] = nlohmann::json::array();
    for (const auto& d : cfg.datasets) {
        nlohmann::json jd;
        jd["label"] = d.label;
        jd["length"] = d.length;
        jd["height"] = d.height;
        jd["fine"] = {d.fine_nx, d.fine_ny};
        jd["coarse_mesh_sizes"] = d.coarse_sizes;
        jd["cases"] = nlohmann::json::array();
        for (const auto& c : d.cases) {
            nlohmann::json jc;
            jc["id"] = c.id;
            jc["injection_temperature_k"] = c.t_inj;
            jc["injection_rate"] = c.u_inj;
            jd["cases"].push_back(jc);
        }
        const CaseSpec& c0 = d.cases.front();
        jd["top_wall"] = c0.top_mode == TopWallMode::fixed_temperature
                             ? nlohmann::json{{"mode", to_string(c0.top_mode)}, {"temperature_k", c0.t_top}}
                             : nlohmann::json{{"mode", to_string(c0.top_mode)}, {"flux_w_m2", c0.q_top}};
        jd["inlet"] = {{"side", to_string(c0.inlet_side)}, {"from", c0.inlet_lo}, {"to", c0.inlet_hi}};
        jd["vent"] = {{"side", to_string(c0.vent_side)}, {"from", c0.vent_lo}, {"to", c0.vent_hi}};
        doc["datasets"].push_back(jd);
    }
    doc["tests"] = nlohmann::json::array();
    for (const auto& t : cfg.tests) {
        nlohmann::json jt;
        jt["id"] = t.id;
        jt["train"] = t.train;
        jt["test"] = t.test;
        jt["variant"] = to_string(t.variant);
        const std::uint64_t seed =
            t.surrogate_seed_explicit ? t.surrogate.seed : detail::derive_seed(cfg.seed, "train/" + t.key());
        jt["surrogate"] = {{"hidden", t.surrogate.hidden},
                           {"activation", t.surrogate.activation},
                           {"max_epochs", t.surrogate.max_epochs},
                           {"max_rows", t.surrogate.max_rows},
                           {"validation_fraction", t.surrogate.validation_fraction},
                           {"seed", seed}};
        jt["similarity"] = {{"self_quantile", t.similarity.thresholds.self_quantile},
                            {"extrapolation_fraction", t.similarity.thresholds.extrapolation_fraction},
                            {"max_train_rows", t.similarity.kde.max_train_rows}};
        jt["projection"] = {{"enabled", t.projection.enabled},
                            {"perplexity", t.projection.options.perplexity},
                            {"iterations", t.projection.options.iterations},
                            {"max_rows", t.projection.options.max_rows}};
        doc["tests"].push_back(jt);
    }
    return doc;
}

// ---------------------------------------------------------------------------
// Content-addressed solve cache

namespace detail {

inline std::string solve_cache_key(const CaseSpec& c, int nx, int ny, const SolverConfig& cfg, bool cascade) {
    std::ostringstream os;
    os << "schema " << kPipelineSchema << '\n';
    os << "case " << c.id << ' ' << c.dataset << '\n';
    os << "domain " << format_double(c.length) << ' ' << format_double(c.height) << '\n';
    os << "top " << to_string(c.top_mode) << ' ' << format_double(c.t_top) << ' ' << format_double(c.q_top) << '\n';
    os << "bottom " << to_string(c.bottom_mode) << ' ' << format_double(c.t_bottom) << '\n';
    os << "injection " << format_double(c.t_inj) << ' ' << format_double(c.u_inj) << ' ' << format_double(c.p_ini)
       << '\n';
    os << "inlet " << to_string(c.inlet_side) << ' ' << format_double(c.inlet_lo) << ' ' << format_double(c.inlet_hi)
       << '\n';
    os << "vent " << to_string(c.vent_side) << ' ' << format_double(c.vent_lo) << ' ' << format_double(c.vent_hi)
       << '\n';
    os << "grid " << nx << ' ' << ny << '\n';
    os << "path " << (cascade ? "cascade" : "steady") << '\n';
    os << "solver " << to_string(cfg.turbulence) << ' ' << format_double(cfg.tolerance) << ' '
       << cfg.max_outer_iterations << ' ' << format_double(cfg.relax_uv) << ' ' << format_double(cfg.relax_p) << ' '
       << format_double(cfg.relax_t) << ' ' << format_double(cfg.relax_ke) << ' ' << format_double(cfg.relax_mut)
       << ' ' << (cfg.boussinesq ? 1 : 0) << ' ' << format_double(cfg.k_min) << ' ' << format_double(cfg.eps_min)
       << ' ' << cfg.pressure_cycles << ' ' << cfg.scalar_cycles << ' ' << (cfg.pseudo_transient ? 1 : 0) << ' '
       << format_double(cfg.ptc_cfl0) << ' ' << cfg.ptc_subiters << '\n';
    return os.str();
}

inline std::string cache_file_name(const CaseSpec& c, int nx, int ny, const SolverConfig& cfg, bool cascade) {
    const std::string key = solve_cache_key(c, nx, ny, cfg, cascade);
    return c.id + "_" + (cascade ? "high" : "low") + "_" + std::to_string(nx) + "x" + std::to_string(ny) + "_" +
           hash_hex(key) + ".txt";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Campaign runner

struct RunOptions {
    std::string out_dir;    // overrides config/environment resolution
    std::string cache_dir;  // overrides the config cache directory
    int workers = 0;        // <= 0 picks default_workers()
    bool has_seed = false;
    std::uint64_t seed = 0;
};

struct StageTiming {
    std::string kind;   // hf-solve | lf-solve | db-build | test | report
    std::string label;  // whitespace-free job identifier
    double seconds = 0.0;
    std::string note;  // solved | cache | rows=N | ok
};

struct CampaignOutcome {
    std::filesystem::path out_dir, cache_dir;
    TrendReport trend;
    std::vector<StageTiming> timings;
    std::vector<std::string> files;  // artifact paths relative to out_dir
    double total_seconds = 0.0;
};

inline std::filesystem::path resolve_output_dir(const CampaignConfig& cfg, const RunOptions& opt) {
    if (!opt.out_dir.empty()) return opt.out_dir;
    std::filesystem::path base =
        cfg.output.empty() ? std::filesystem::path("out") / cfg.name : std::filesystem::path(cfg.output);
    const char* root = std::getenv(kOutRootEnv);
    if (root && *root && base.is_relative()) return std::filesystem::path(root) / base;
    return base;
}

inline std::filesystem::path resolve_cache_dir(const CampaignConfig& cfg, const RunOptions& opt) {
    if (!opt.cache_dir.empty()) return opt.cache_dir;
    std::filesystem::path base =
        cfg.cache.empty() ? std::filesystem::path("out") / "solve-cache" : std::filesystem::path(cfg.cache);
    const char* root = std::getenv(kOutRootEnv);
    if (root && *root && base.is_relative()) return std::filesystem::path(root) / base;
    return base;
}

/// Greedy longest-processing-time schedule of independent jobs onto a fixed
/// worker pool; returns the resulting makespan.
inline double simulated_makespan_seconds(std::vector<double> job_seconds, int workers) {
    if (workers < 1) throw std::runtime_error("makespan: need at least one worker");
    std::sort(job_seconds.begin(), job_seconds.end(), std::greater<>());
    std::priority_queue<double, std::vector<double>, std::greater<>> loads;
    for (int w = 0; w < workers; ++w) loads.push(0.0);
    for (double s : job_seconds) {
        if (s < 0.0) throw std::runtime_error("makespan: negative job time");
        double lo = loads.top();
        loads.pop();
        loads.push(lo + s);
    }
    double makespan = 0.0;
    while (!loads.empty()) {
        makespan = loads.top();
        loads.pop();
    }
    return makespan;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string mesh_token(double h) {
    std::string s = format_double(h);
    return s;
}

// Stacks train rows then target rows into one matrix for the t-SNE overlay.
inline FeatureMatrix stacked_features(const ErrorDatabase& train, const ErrorDatabase& target) {
    FeatureMatrix m;
    m.names = train.names;
    m.case_id = "train+target";
    m.mesh_size = 0.0;
    m.variant = train.variant;
    m.values = train.features;
    m.values.insert(m.values.end(), target.features.begin(), target.features.end());
    m.flags = train.flags;
    m.flags.insert(m.flags.end(), target.flags.begin(), target.flags.end());
    return m;
}

}  // namespace detail

/// Runs every stage of a campaign — solves (through the cache), error
/// databases, per-test similarity/training/correction, trend report and
/// manifest — staging each artifact under the resolved output directory.
inline CampaignOutcome run_campaign(const CampaignConfig& cfg_in, const RunOptions& opt = RunOptions{}) {
    using clock = std::chrono::steady_clock;
    const auto campaign_t0 = clock::now();

    CampaignConfig cfg = cfg_in;
    if (opt.has_seed) cfg.seed = opt.seed;
    const int workers = opt.workers > 0 ? opt.workers : default_workers();

    CampaignOutcome oc;
    oc.out_dir = resolve_output_dir(cfg, opt);
    oc.cache_dir = resolve_cache_dir(cfg, opt);
    std::filesystem::create_directories(oc.out_dir);
    std::filesystem::create_directories(oc.cache_dir);

    const nlohmann::json norm = normalized_config_json(cfg);
    const std::string norm_text = norm.dump(1) + "\n";
    write_file_atomic(oc.out_dir / "normalized_config.json", norm_text);
    oc.files.push_back("normalized_config.json");

    SolverConfig cfg_low;
    cfg_low.tolerance = cfg.low_tolerance;
    cfg_low.max_outer_iterations = cfg.max_outer_iterations;
    SolverConfig cfg_high = cfg_low;
    cfg_high.tolerance = cfg.high_tolerance;

    // --- solve stage: one HF job per case plus one LF job per coarse mesh ---
    struct SolveJob {
        const CaseSpec* spec;
        bool high;
        int nx, ny;
        std::filesystem::path path;
        std::string label;
    };
    std::vector<SolveJob> jobs;
    for (const auto& ds : cfg.datasets) {
        for (const auto& cs : ds.cases) {
            SolveJob hf{&cs, true, ds.fine_nx, ds.fine_ny, {}, cs.id};
            hf.path = oc.cache_dir / detail::cache_file_name(cs, hf.nx, hf.ny, cfg_high, true);
            jobs.push_back(hf);
            for (double h : ds.coarse_sizes) {
                const StructuredGrid2D g = grid_for_mesh_size(cs, h);
                SolveJob lf{&cs, false, g.nx(), g.ny(), {}, cs.id + "@" + detail::mesh_token(h)};
                lf.path = oc.cache_dir / detail::cache_file_name(cs, lf.nx, lf.ny, cfg_low, false);
                jobs.push_back(lf);
            }
        }
    }
    std::vector<FieldSnapshot> solved(jobs.size());
    std::vector<StageTiming> solve_timings(jobs.size());
    parallel_for_each(jobs.size(), workers, [&](std::size_t i) {
        const SolveJob& job = jobs[i];
        const auto t0 = clock::now();
        bool from_cache = false;
        if (std::filesystem::exists(job.path)) {
            try {
                solved[i] = load_snapshot(job.path.string());
                from_cache = true;
            } catch (const std::exception&) {
                from_cache = false;  // unreadable entry: resolve by re-solving
            }
        }
        if (!from_cache) {
            SolverConfig sc = job.high ? cfg_high : cfg_low;
            sc.fidelity = job.high ? "high" : "low";
            const StructuredGrid2D g = StructuredGrid2D::for_case(*job.spec, job.nx, job.ny);
            solved[i] = job.high ? solve_steady_cascade(*job.spec, g, sc) : solve_steady(*job.spec, g, sc);
            save_snapshot(job.path.string(), solved[i]);
        }
        solve_timings[i] = {job.high ? "hf-solve" : "lf-solve", job.label, detail::seconds_since(t0),
                            from_cache ? "cache" : "solved"};
    });
    oc.timings.insert(oc.timings.end(), solve_timings.begin(), solve_timings.end());

    std::vector<FieldSnapshot> hf_snaps, lf_snaps;
    for (std::size_t i = 0; i < jobs.size(); ++i)
        (jobs[i].high ? hf_snaps : lf_snaps).push_back(std::move(solved[i]));
    solved.clear();

    std::map<std::string, const FieldSnapshot*> hf_by_case;
    for (const auto& s : hf_snaps) hf_by_case[s.case_spec.id] = &s;
    std::map<std::pair<std::string, double>, const FieldSnapshot*> lf_by_case_mesh;
    for (const auto& s : lf_snaps) lf_by_case_mesh[{s.case_spec.id, s.mesh_size}] = &s;

    // --- database stage: one combined database per feature variant in use ---
    std::set<FeatureVariant> variants;
    for (const auto& t : cfg.tests) variants.insert(t.variant);
    std::map<FeatureVariant, ErrorDatabase> dbs;
    for (FeatureVariant v : variants) {
        const auto t0 = clock::now();
        ErrorDatabase db = build_error_database(lf_snaps, hf_snaps, v);
        std::string labels;
        for (const auto& d : cfg.datasets) labels += (labels.empty() ? "" : "+") + d.label;
        db.built_from = cfg.name + " campaign (" + labels + "): " + db.built_from;
        const std::string rel = "database_" + to_string(v) + ".txt";
        save_error_database((oc.out_dir / rel).string(), db);
        oc.files.push_back(rel);
        oc.timings.push_back({"db-build", to_string(v), detail::seconds_since(t0),
                              "rows=" + std::to_string(db.rows())});
        dbs.emplace(v, std::move(db));
    }

    // --- per-test pipelines (independent; outputs keyed by id and variant) ---
    std::vector<EvaluationResult> results(cfg.tests.size());
    std::vector<StageTiming> test_timings(cfg.tests.size());
    std::vector<std::vector<std::string>> test_files(cfg.tests.size());
    parallel_for_each(cfg.tests.size(), workers, [&](std::size_t ti) {
        const TestSpec& t = cfg.tests[ti];
        const auto t0 = clock::now();
        const std::string rel_dir = "tests/" + t.key();
        const std::filesystem::path dir = oc.out_dir / rel_dir;
        std::filesystem::create_directories(dir / "corrected");
        auto emit = [&](const std::string& rel) { test_files[ti].push_back(rel_dir + "/" + rel); };

        // campaign selectors join with '+', the split grammar with ','
        auto as_scheme = [](std::string sel) {
            std::replace(sel.begin(), sel.end(), '+', ',');
            return sel;
        };
        const auto [train_db, test_db] =
            split_database(dbs.at(t.variant), "train=" + as_scheme(t.train) + ";test=" + as_scheme(t.test));

        KdeOptions kde_opt = t.similarity.kde;
        kde_opt.seed = detail::derive_seed(cfg.seed, "kde/" + t.key());
        SimilarityReport sim = pcc_report(train_db, test_db, t.similarity.thresholds, kde_opt);

        if (t.projection.enabled) {
            const FeatureMatrix stacked = detail::stacked_features(train_db, test_db);
            TsneOptions tsne_opt = t.projection.options;
            tsne_opt.seed = detail::derive_seed(cfg.seed, "tsne/" + t.key());
            const TsneEmbedding emb = tsne_embed(stacked, tsne_opt);
            std::vector<std::uint8_t> is_target(emb.row_indices.size());
            for (std::size_t r = 0; r < emb.row_indices.size(); ++r)
                is_target[r] = emb.row_indices[r] >= static_cast<std::size_t>(train_db.rows()) ? 1 : 0;
            sim.embedding_xy = emb.xy;
            sim.embedding_is_target = is_target;
            write_tsne_overlay_svg((dir / "overlay.svg").string(), emb, is_target,
                                   cfg.name + " test " + t.id + " (" + to_string(t.variant) + ")");
            emit("overlay.svg");
        }
        save_similarity_report((dir / "similarity.txt").string(), sim);
        emit("similarity.txt");

        TrainConfig tc = t.surrogate;
        if (!t.surrogate_seed_explicit) tc.seed = detail::derive_seed(cfg.seed, "train/" + t.key());
        const DfnnModel model = train_surrogate(train_db, tc);
        save_surrogate((dir / "model.json").string(), model);
        emit("model.json");

        // corrected fields and pooled NRMSE over every test snapshot
        std::vector<std::pair<std::string, double>> pairs;
        for (int r = 0; r < test_db.rows(); ++r) {
            std::pair<std::string, double> p{test_db.case_id[r], test_db.mesh_size[r]};
            if (pairs.empty() || pairs.back() != p) pairs.push_back(p);
        }
        std::vector<double> ref_u, ref_v, ref_t, raw_u, raw_v, raw_t, cor_u, cor_v, cor_t;
        bool first_panel = true;
        for (const auto& [case_id, mesh] : pairs) {
            auto it = lf_by_case_mesh.find({case_id, mesh});
            if (it == lf_by_case_mesh.end())
                throw std::runtime_error("campaign " + cfg.name + ": no staged coarse solution for case " + case_id);
            const FieldSnapshot& lf = *it->second;
            const FieldSnapshot& hf = *hf_by_case.at(case_id);
            const FieldSnapshot ref = project_fine_to_coarse(hf, lf.grid);
            const FeatureMatrix feats = extract_features(lf, t.variant);
            const DeltaPrediction pred = predict_errors(model, feats);
            const FieldSnapshot corrected = correct_snapshot(lf, pred);
            const std::string rel =
                "corrected/" + case_id + "_" + std::to_string(lf.grid.nx()) + "x" + std::to_string(lf.grid.ny()) +
                ".txt";
            save_snapshot((dir / rel).string(), corrected);
            emit(rel);
            if (first_panel) {
                first_panel = false;
                write_field_panels_svg((dir / "fields_t.svg").string(), lf.grid,
                                       {{"coarse", &lf.t}, {"corrected", &corrected.t}, {"reference", &ref.t}},
                                       cfg.name + " test " + t.id + ": " + case_id + " temperature");
                emit("fields_t.svg");
            }
            ref_u.insert(ref_u.end(), ref.u.begin(), ref.u.end());
            ref_v.insert(ref_v.end(), ref.v.begin(), ref.v.end());
            ref_t.insert(ref_t.end(), ref.t.begin(), ref.t.end());
            raw_u.insert(raw_u.end(), lf.u.begin(), lf.u.end());
            raw_v.insert(raw_v.end(), lf.v.begin(), lf.v.end());
            raw_t.insert(raw_t.end(), lf.t.begin(), lf.t.end());
            cor_u.insert(cor_u.end(), corrected.u.begin(), corrected.u.end());
            cor_v.insert(cor_v.end(), corrected.v.begin(), corrected.v.end());
            cor_t.insert(cor_t.end(), corrected.t.begin(), corrected.t.end());
        }

        EvaluationResult res;
        res.test_id = t.id;
        res.train_labels = t.train;
        res.test_labels = t.test;
        res.pcc_label = sim.pcc_label;
        res.variant = to_string(t.variant);
        res.d_kde = sim.d_mean;
        res.raw = {nrmse(ref_u, raw_u, NrmseDenominator::mean_abs), nrmse(ref_v, raw_v, NrmseDenominator::mean_abs),
                   nrmse(ref_t, raw_t, NrmseDenominator::mean)};
        res.corrected = {nrmse(ref_u, cor_u, NrmseDenominator::mean_abs),
                         nrmse(ref_v, cor_v, NrmseDenominator::mean_abs),
                         nrmse(ref_t, cor_t, NrmseDenominator::mean)};
        res.runtime_seconds = detail::seconds_since(t0);
        res.validate();

        TextHeader eh;
        eh.set("test", t.id);
        eh.set("train", t.train);
        eh.set("test_labels", t.test);
        eh.set("variant", res.variant);
        eh.set("pcc", res.pcc_label);
        eh.set_double("d_kde", res.d_kde);
        eh.set_double("nrmse_u", res.corrected.u);
        eh.set_double("nrmse_v", res.corrected.v);
        eh.set_double("nrmse_t", res.corrected.t);
        eh.set_double("raw_nrmse_u", res.raw.u);
        eh.set_double("raw_nrmse_v", res.raw.v);
        eh.set_double("raw_nrmse_t", res.raw.t);
        eh.set_long("train_rows", train_db.rows());
        eh.set_long("test_rows", test_db.rows());
        eh.set_long("epochs", model.manifest.epochs);
        eh.set("stop_reason", model.manifest.stop_reason);
        eh.set_double("objective", model.manifest.objective);
        eh.set_double("runtime_seconds", res.runtime_seconds);
        std::ostringstream eos;
        eh.write(eos);
        write_file_atomic(dir / "evaluation.txt", eos.str());
        emit("evaluation.txt");

        results[ti] = std::move(res);
        test_timings[ti] = {"test", t.key(), detail::seconds_since(t0), "ok"};
    });
    oc.timings.insert(oc.timings.end(), test_timings.begin(), test_timings.end());
    for (auto& tf : test_files) oc.files.insert(oc.files.end(), tf.begin(), tf.end());

    // --- trend report ---
    {
        const auto t0 = clock::now();
        oc.trend = trend_report(results);
        save_trend_report((oc.out_dir / "trend.txt").string(), oc.trend);
        oc.files.push_back("trend.txt");
        nlohmann::json jt;
        jt["campaign"] = cfg.name;
        jt["velocity_denominator"] = "mean absolute reference";
        jt["temperature_denominator"] = "mean reference (kelvin)";
        jt["rows"] = nlohmann::json::array();
        for (const auto& r : oc.trend.rows) {
            nlohmann::json jr;
            jr["test"] = r.test_id;
            jr["train"] = r.train_labels;
            jr["test_labels"] = r.test_labels;
            jr["variant"] = r.variant;
            jr["pcc"] = r.pcc_label;
            jr["d_kde"] = r.d_kde;
            jr["nrmse"] = {{"u", r.corrected.u}, {"v", r.corrected.v}, {"t", r.corrected.t}};
            jr["raw_nrmse"] = {{"u", r.raw.u}, {"v", r.raw.v}, {"t", r.raw.t}};
            jt["rows"].push_back(jr);
        }
        jt["columns"] = nlohmann::json::array();
        for (const auto& c : oc.trend.columns) {
            nlohmann::json jc;
            jc["name"] = c.name;
            if (c.rank_correlation.defined)
                jc["spearman_rho"] = c.rank_correlation.rho;
            else
                jc["spearman_rho"] = nullptr;
            jc["inversions"] = c.inversions;
            jt["columns"].push_back(jc);
        }
        write_file_atomic(oc.out_dir / "trend.json", jt.dump(1) + "\n");
        oc.files.push_back("trend.json");
        oc.timings.push_back(
            {"report", "trend", detail::seconds_since(t0), "rows=" + std::to_string(oc.trend.rows.size())});
    }

    oc.total_seconds = detail::seconds_since(campaign_t0);

    // --- manifest: inputs, seeds, versions, timings, artifact inventory ---
    {
        TextHeader h;
        h.set("campaign", cfg.name);
        h.set("config_hash", hash_hex(norm_text));
        h.set("schema", std::to_string(kPipelineSchema));
        h.set("seed", std::to_string(cfg.seed));
        h.set_long("workers", workers);
        h.set("cache_dir", oc.cache_dir.string());
        h.set_long("datasets", static_cast<long>(cfg.datasets.size()));
        h.set_long("tests", static_cast<long>(cfg.tests.size()));
        h.set_double("low_tolerance", cfg.low_tolerance);
        h.set_double("high_tolerance", cfg.high_tolerance);
        h.set_double("total_seconds", oc.total_seconds);
        std::ostringstream os;
        h.write(os);
        os << "kind label seconds note\n";
        for (const auto& s : oc.timings)
            os << s.kind << ' ' << s.label << ' ' << format_double(s.seconds) << ' ' << s.note << '\n';
        os << "files\n";
        for (const auto& f : oc.files) os << f << '\n';
        write_file_atomic(oc.out_dir / "manifest.txt", os.str());
    }
    return oc;
}

struct CampaignManifest {
    TextHeader header;
    std::vector<StageTiming> stages;
    std::vector<std::string> files;
};

/// Reads a campaign manifest back (header, stage timings, artifact list).
inline CampaignManifest read_campaign_manifest(const std::string& path) {
    std::istringstream is(read_file(path));
    CampaignManifest m;
    std::string first;
    m.header = read_text_header(is, first);
    if (first != "kind label seconds note")
        throw std::runtime_error(path + ": expected the stage-timing table, got '" + first + "'");
    std::string line;
    bool in_files = false;
    while (std::getline(is, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t == "files") {
            in_files = true;
            continue;
        }
        if (in_files) {
            m.files.push_back(t);
            continue;
        }
        const auto tok = split_ws(t);
        if (tok.size() != 4) throw std::runtime_error(path + ": malformed stage row '" + t + "'");
        m.stages.push_back({tok[0], tok[1], parse_double(tok[2], "stage seconds"), tok[3]});
    }
    if (!in_files) throw std::runtime_error(path + ": manifest has no artifact inventory");
    return m;
}

}  // namespace fsm
