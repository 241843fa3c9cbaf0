#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsm/features.hpp"
#include "fsm/snapshot.hpp"
#include "fsm/util.hpp"

namespace fsm {

/// Per-cell pairing of local features with the coarse-simulation error
/// targets du, dv, dT (projected fine reference minus coarse value).
struct ErrorDatabase {
    std::vector<std::string> names = feature_names();
    FeatureVariant variant = FeatureVariant::dimensional;
    std::string built_from;  // creation manifest note

    // column-major row data; all vectors share the same length
    std::vector<double> features;  // rows() x kFeatureCount, row-major
    std::vector<double> du, dv, dt;
    std::vector<std::string> case_id, dataset;
    std::vector<double> mesh_size;
    std::vector<int> cell;
    std::vector<std::uint8_t> flags;

    int rows() const { return static_cast<int>(du.size()); }

    double feature_at(int row, int col) const {
        return features[static_cast<std::size_t>(row) * kFeatureCount + col];
    }

    void validate() const {
        const std::size_t n = du.size();
        if (names.size() != kFeatureCount) throw std::runtime_error("error database: expected 30 feature columns");
        if (features.size() != n * kFeatureCount || dv.size() != n || dt.size() != n || case_id.size() != n ||
            dataset.size() != n || mesh_size.size() != n || cell.size() != n || flags.size() != n)
            throw std::runtime_error("error database: column lengths disagree");
        for (std::size_t i = 0; i < n; ++i)
            if (!std::isfinite(du[i]) || !std::isfinite(dv[i]) || !std::isfinite(dt[i]))
                throw std::runtime_error("error database: non-finite target in row " + std::to_string(i));
    }

    FeatureMatrix feature_matrix() const {
        FeatureMatrix m;
        m.names = names;
        m.case_id = "database";
        m.mesh_size = 0.0;
        m.variant = variant;
        m.values = features;
        m.flags = flags;
        return m;
    }
};

struct ColumnStats {
    std::string name;
    double min = 0.0, max = 0.0, mean = 0.0;
};

/// Per-column min/max/mean over features and targets.
inline std::vector<ColumnStats> database_stats(const ErrorDatabase& db) {
    const int n = db.rows();
    if (n == 0) throw std::runtime_error("error database: stats of empty database");
    std::vector<ColumnStats> out;
    auto column = [&](const std::string& name, auto getter) {
        ColumnStats s;
        s.name = name;
        s.min = s.max = getter(0);
        double sum = 0.0;
        for (int r = 0; r < n; ++r) {
            const double x = getter(r);
            s.min = std::min(s.min, x);
            s.max = std::max(s.max, x);
            sum += x;
        }
        s.mean = sum / n;
        out.push_back(s);
    };
    for (int c = 0; c < kFeatureCount; ++c)
        column(db.names[c], [&, c](int r) { return db.feature_at(r, c); });
    column("du", [&](int r) { return db.du[r]; });
    column("dv", [&](int r) { return db.dv[r]; });
    column("dT", [&](int r) { return db.dt[r]; });
    return out;
}

/// Pair each coarse snapshot with its same-case fine reference, project the
/// fine fields onto the coarse grid, and form per-cell targets.
inline ErrorDatabase build_error_database(std::vector<FieldSnapshot> lf, const std::vector<FieldSnapshot>& hf,
                                          FeatureVariant variant, const FluidProperties& props = FluidProperties{}) {
    if (lf.empty()) throw std::runtime_error("error database: no coarse snapshots given");
    std::map<std::string, const FieldSnapshot*> hf_by_case;
    for (const auto& s : hf) hf_by_case[s.case_spec.id] = &s;

    // deterministic record order: (case id, mesh size, cell index)
    std::sort(lf.begin(), lf.end(), [](const FieldSnapshot& a, const FieldSnapshot& b) {
        if (a.case_spec.id != b.case_spec.id) return a.case_spec.id < b.case_spec.id;
        return a.mesh_size < b.mesh_size;
    });

    ErrorDatabase db;
    db.variant = variant;
    for (const auto& s : lf) {
        const auto it = hf_by_case.find(s.case_spec.id);
        if (it == hf_by_case.end())
            throw std::runtime_error("error database: no fine reference for case '" + s.case_spec.id + "'");
        const FieldSnapshot proj = project_fine_to_coarse(*it->second, s.grid);
        const FeatureMatrix m = extract_features(s, variant, props);
        const int n = s.grid.cell_count();
        for (int c = 0; c < n; ++c) {
            for (int f = 0; f < kFeatureCount; ++f) db.features.push_back(m.at(c, f));
            db.du.push_back(proj.u[c] - s.u[c]);
            db.dv.push_back(proj.v[c] - s.v[c]);
            db.dt.push_back(proj.t[c] - s.t[c]);
            db.case_id.push_back(s.case_spec.id);
            db.dataset.push_back(s.case_spec.dataset);
            db.mesh_size.push_back(s.mesh_size);
            db.cell.push_back(c);
            db.flags.push_back(m.flags[c]);
        }
    }
    db.built_from = std::to_string(lf.size()) + " coarse snapshots, " + std::to_string(hf_by_case.size()) +
                    " fine references";
    db.validate();
    return db;
}

inline ErrorDatabase concat_error_databases(const std::vector<ErrorDatabase>& parts) {
    if (parts.empty()) throw std::runtime_error("error database: nothing to concatenate");
    ErrorDatabase out = parts.front();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const ErrorDatabase& d = parts[p];
        if (d.names != out.names) throw std::runtime_error("error database: feature-name lists differ");
        if (d.variant != out.variant) throw std::runtime_error("error database: variants differ");
        out.features.insert(out.features.end(), d.features.begin(), d.features.end());
        out.du.insert(out.du.end(), d.du.begin(), d.du.end());
        out.dv.insert(out.dv.end(), d.dv.begin(), d.dv.end());
        out.dt.insert(out.dt.end(), d.dt.begin(), d.dt.end());
        out.case_id.insert(out.case_id.end(), d.case_id.begin(), d.case_id.end());
        out.dataset.insert(out.dataset.end(), d.dataset.begin(), d.dataset.end());
        out.mesh_size.insert(out.mesh_size.end(), d.mesh_size.begin(), d.mesh_size.end());
        out.cell.insert(out.cell.end(), d.cell.begin(), d.cell.end());
        out.flags.insert(out.flags.end(), d.flags.begin(), d.flags.end());
        out.built_from += " + " + d.built_from;
    }
    out.validate();
    return out;
}

// ---- selection / split -----------------------------------------------------

namespace detail {

/// One selector item: a dataset label ("A"), a label with a 1-based ordinal
/// range over its distinct case ids ("A:6-8"), or a full case id ("A-07").
struct Selector {
    std::string label;
    bool has_range = false;
    long lo = 0, hi = 0;
    bool is_case_id = false;
};

inline Selector parse_selector(const std::string& item) {
    Selector s;
    const auto colon = item.find(':');
    if (colon != std::string::npos) {
        s.label = trim(item.substr(0, colon));
        const std::string range = trim(item.substr(colon + 1));
        const auto dash = range.find('-');
        if (dash == std::string::npos) {
            s.lo = s.hi = parse_long(range, "split range");
        } else {
            s.lo = parse_long(trim(range.substr(0, dash)), "split range");
            s.hi = parse_long(trim(range.substr(dash + 1)), "split range");
        }
        if (s.lo < 1 || s.hi < s.lo)
            throw std::runtime_error("split: bad ordinal range in '" + item + "'");
        s.has_range = true;
    } else {
        s.label = trim(item);
        s.is_case_id = s.label.find('-') != std::string::npos;
    }
    if (s.label.empty()) throw std::runtime_error("split: empty selector item");
    return s;
}

}  // namespace detail

/// Scheme grammar: "train=<items>;test=<items>", items comma-separated.
/// Each item selects a dataset label, a case-ordinal range within a dataset
/// ("A:6-8" = 6th through 8th case id of dataset A), or a single case id.
struct SplitScheme {
    std::vector<detail::Selector> train, test;
    std::string text;

    static SplitScheme parse(const std::string& scheme) {
        SplitScheme out;
        out.text = scheme;
        bool saw_train = false, saw_test = false;
        for (const std::string& part : split_char(scheme, ';')) {
            const auto eq = part.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("split: expected key=items in '" + part + "'");
            const std::string key = trim(part.substr(0, eq));
            std::vector<detail::Selector>* side = nullptr;
            if (key == "train") {
                side = &out.train;
                saw_train = true;
            } else if (key == "test") {
                side = &out.test;
                saw_test = true;
            } else {
                throw std::runtime_error("split: unknown side '" + key + "'");
            }
            for (const std::string& item : split_char(part.substr(eq + 1), ','))
                side->push_back(detail::parse_selector(item));
        }
        if (!saw_train || !saw_test) throw std::runtime_error("split: scheme needs both train= and test=");
        return out;
    }
};

inline std::vector<std::uint8_t> select_rows(const ErrorDatabase& db, const std::vector<detail::Selector>& sel) {
    // distinct case ids per dataset, sorted, for ordinal ranges
    std::map<std::string, std::vector<std::string>> cases_by_dataset;
    for (int r = 0; r < db.rows(); ++r) {
        auto& v = cases_by_dataset[db.dataset[r]];
        if (std::find(v.begin(), v.end(), db.case_id[r]) == v.end()) v.push_back(db.case_id[r]);
    }
    for (auto& [label, v] : cases_by_dataset) std::sort(v.begin(), v.end());

    std::vector<std::uint8_t> pick(db.rows(), 0);
    for (const auto& s : sel) {
        bool matched = false;
        if (s.is_case_id) {
            for (int r = 0; r < db.rows(); ++r)
                if (db.case_id[r] == s.label) {
                    pick[r] = 1;
                    matched = true;
                }
            if (!matched) throw std::runtime_error("split: case id '" + s.label + "' not present");
            continue;
        }
        const auto it = cases_by_dataset.find(s.label);
        if (it == cases_by_dataset.end())
            throw std::runtime_error("split: dataset '" + s.label + "' not present");
        const std::vector<std::string>& ids = it->second;
        std::vector<std::string> wanted;
        if (s.has_range) {
            if (s.hi > static_cast<long>(ids.size()))
                throw std::runtime_error("split: range " + std::to_string(s.lo) + "-" + std::to_string(s.hi) +
                                         " exceeds the " + std::to_string(ids.size()) + " cases of dataset '" +
                                         s.label + "'");
            wanted.assign(ids.begin() + (s.lo - 1), ids.begin() + s.hi);
        } else {
            wanted = ids;
        }
        for (int r = 0; r < db.rows(); ++r)
            if (db.dataset[r] == s.label &&
                std::find(wanted.begin(), wanted.end(), db.case_id[r]) != wanted.end())
                pick[r] = 1;
    }
    return pick;
}

inline ErrorDatabase take_rows(const ErrorDatabase& db, const std::vector<std::uint8_t>& pick,
                               const std::string& note) {
    ErrorDatabase out;
    out.names = db.names;
    out.variant = db.variant;
    out.built_from = note;
    for (int r = 0; r < db.rows(); ++r) {
        if (!pick[r]) continue;
        for (int f = 0; f < kFeatureCount; ++f) out.features.push_back(db.feature_at(r, f));
        out.du.push_back(db.du[r]);
        out.dv.push_back(db.dv[r]);
        out.dt.push_back(db.dt[r]);
        out.case_id.push_back(db.case_id[r]);
        out.dataset.push_back(db.dataset[r]);
        out.mesh_size.push_back(db.mesh_size[r]);
        out.cell.push_back(db.cell[r]);
        out.flags.push_back(db.flags[r]);
    }
    return out;
}

/// Deterministic split by case/dataset labels; both sides must be nonempty
/// and never share a row.
inline std::pair<ErrorDatabase, ErrorDatabase> split_database(const ErrorDatabase& db, const std::string& scheme) {
    const SplitScheme s = SplitScheme::parse(scheme);
    const std::vector<std::uint8_t> train_pick = select_rows(db, s.train);
    const std::vector<std::uint8_t> test_pick = select_rows(db, s.test);
    for (int r = 0; r < db.rows(); ++r)
        if (train_pick[r] && test_pick[r])
            throw std::runtime_error("split: row of case '" + db.case_id[r] +
                                     "' selected on both sides by scheme '" + scheme + "'");
    ErrorDatabase train = take_rows(db, train_pick, "split train side of: " + scheme);
    ErrorDatabase test = take_rows(db, test_pick, "split test side of: " + scheme);
    if (train.rows() == 0) throw std::runtime_error("split: empty train side from scheme '" + scheme + "'");
    if (test.rows() == 0) throw std::runtime_error("split: empty test side from scheme '" + scheme + "'");
    return {std::move(train), std::move(test)};
}

// ---- persistence ----------------------------------------------------------

inline void write_error_database(std::ostream& os, const ErrorDatabase& db) {
    db.validate();
    TextHeader h;
    h.set("variant", to_string(db.variant));
    h.set_long("rows", db.rows());
    h.set("built_from", db.built_from.empty() ? "unspecified" : db.built_from);
    h.write(os);
    os << "case dataset mesh_size cell flags";
    for (const auto& n : db.names) os << ' ' << n;
    os << " du dv dT\n";
    for (int r = 0; r < db.rows(); ++r) {
        os << db.case_id[r] << ' ' << db.dataset[r] << ' ' << format_double(db.mesh_size[r]) << ' ' << db.cell[r]
           << ' ' << static_cast<int>(db.flags[r]);
        for (int c = 0; c < kFeatureCount; ++c) os << ' ' << format_double(db.feature_at(r, c));
        os << ' ' << format_double(db.du[r]) << ' ' << format_double(db.dv[r]) << ' ' << format_double(db.dt[r])
           << '\n';
    }
}

inline ErrorDatabase read_error_database(std::istream& is, const std::string& what = "error database") {
    std::string first_body;
    TextHeader h = read_text_header(is, first_body);
    ErrorDatabase db;
    db.variant = variant_from_string(h.get("variant"));
    db.built_from = h.get("built_from");
    const long rows = h.get_long("rows");

    const std::vector<std::string> cols = split_ws(first_body);
    const auto& want = feature_names();
    const std::vector<std::string> lead = {"case", "dataset", "mesh_size", "cell", "flags"};
    const std::vector<std::string> tail = {"du", "dv", "dT"};
    if (cols.size() != lead.size() + want.size() + tail.size())
        throw std::runtime_error(what + ": expected " + std::to_string(lead.size() + want.size() + tail.size()) +
                                 " columns, found " + std::to_string(cols.size()));
    for (std::size_t i = 0; i < lead.size(); ++i)
        if (cols[i] != lead[i]) throw std::runtime_error(what + ": unknown column '" + cols[i] + "'");
    for (std::size_t i = 0; i < want.size(); ++i)
        if (cols[lead.size() + i] != want[i])
            throw std::runtime_error(what + ": unknown feature column '" + cols[lead.size() + i] + "'");
    for (std::size_t i = 0; i < tail.size(); ++i)
        if (cols[lead.size() + want.size() + i] != tail[i])
            throw std::runtime_error(what + ": unknown column '" + cols[lead.size() + want.size() + i] + "'");

    std::string line;
    for (long r = 0; r < rows; ++r) {
        if (!std::getline(is, line))
            throw std::runtime_error(what + ": truncated at row " + std::to_string(r) + " of " +
                                     std::to_string(rows));
        const std::vector<std::string> tok = split_ws(line);
        if (tok.size() != cols.size())
            throw std::runtime_error(what + ": row " + std::to_string(r) + " has " + std::to_string(tok.size()) +
                                     " fields, expected " + std::to_string(cols.size()));
        db.case_id.push_back(tok[0]);
        db.dataset.push_back(tok[1]);
        db.mesh_size.push_back(parse_double(tok[2], what));
        db.cell.push_back(static_cast<int>(parse_long(tok[3], what)));
        db.flags.push_back(static_cast<std::uint8_t>(parse_long(tok[4], what)));
        for (int c = 0; c < kFeatureCount; ++c) db.features.push_back(parse_double(tok[5 + c], what));
        db.du.push_back(parse_double(tok[5 + kFeatureCount], what));
        db.dv.push_back(parse_double(tok[6 + kFeatureCount], what));
        db.dt.push_back(parse_double(tok[7 + kFeatureCount], what));
    }
    db.validate();
    return db;
}

inline void save_error_database(const std::string& path, const ErrorDatabase& db) {
    std::ostringstream os;
    write_error_database(os, db);
    write_file_atomic(path, os.str());
}

inline ErrorDatabase load_error_database(const std::string& path) {
    try {
        std::istringstream is(read_file(path));
        return read_error_database(is);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

}  // namespace fsm
