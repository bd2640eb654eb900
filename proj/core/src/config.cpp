#include "oodperm/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "oodperm/error.hpp"
#include "oodperm/random.hpp"

namespace oodperm {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.push_back(text.substr(start));
            return parts;
        }
        parts.push_back(text.substr(start, pos - start));
        start = pos + 1;
    }
}

bool valid_key(std::string_view key) {
    return !key.empty() && std::all_of(key.begin(), key.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '.' ||
               c == '-';
    });
}

class EntryReader {
public:
    EntryReader(const KeyValueFile::Entry& entry, const std::string& origin) : entry_(entry), origin_(origin) {}

    [[noreturn]] void fail(const std::string& message) const {
        throw ConfigError(origin_ + ":" + std::to_string(entry_.line) + ": " + entry_.key + ": " + message);
    }

    std::string text() const {
        if (entry_.value.empty()) {
            fail("value is empty");
        }
        return entry_.value;
    }

    std::uint64_t u64() const {
        std::uint64_t v = 0;
        const auto& s = entry_.value;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
            fail("expected a non-negative integer, got '" + s + "'");
        }
        return v;
    }

    double real() const {
        double v = 0;
        const auto& s = entry_.value;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
            fail("expected a number, got '" + s + "'");
        }
        return v;
    }

    bool boolean() const {
        const auto& s = entry_.value;
        if (s == "true" || s == "1" || s == "yes" || s == "on") {
            return true;
        }
        if (s == "false" || s == "0" || s == "no" || s == "off") {
            return false;
        }
        fail("expected true/false, got '" + s + "'");
    }

    std::vector<std::string> list() const {
        std::vector<std::string> out;
        for (const auto part : split(entry_.value, ',')) {
            const auto item = trim(part);
            if (item.empty()) {
                fail("empty item in list '" + entry_.value + "'");
            }
            out.emplace_back(item);
        }
        return out;
    }

private:
    const KeyValueFile::Entry& entry_;
    const std::string& origin_;
};

struct MetricDraft {
    std::optional<MetricKind> kind;
    std::optional<ColumnSelector> columns;
    std::optional<ColumnSelector> image;
    std::optional<ColumnSelector> reconstruction;
    std::map<std::string, double> params;
    std::size_t line = 0;
};

struct SourceDraft {
    SourceConfig config;
    std::vector<std::string> metric_names;
    bool has_validation = false;
    bool has_test = false;
    std::size_t line = 0;
};

bool excluded_from_hash(std::string_view key) {
    return key == "workers" || key == "permutation.workers" || key == "output";
}

}  // namespace

KeyValueFile KeyValueFile::parse(std::string_view text, std::string origin) {
    KeyValueFile file;
    file.origin_ = std::move(origin);
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    for (const auto raw : split(text, '\n')) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(file.origin_ + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (!valid_key(key)) {
            throw ConfigError(file.origin_ + ":" + std::to_string(line_no) + ": invalid key '" + std::string(key) +
                              "'");
        }
        if (!seen.insert(std::string(key)).second) {
            throw ConfigError(file.origin_ + ":" + std::to_string(line_no) + ": duplicate key '" + std::string(key) +
                              "'");
        }
        file.entries_.push_back({std::string(key), std::string(value), line_no});
    }
    return file;
}

const KeyValueFile::Entry* KeyValueFile::find(std::string_view key) const {
    for (const auto& e : entries_) {
        if (e.key == key) {
            return &e;
        }
    }
    return nullptr;
}

std::uint64_t ExperimentConfig::hash() const {
    return fnv1a64(canonical_text);
}

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir, std::string origin) {
    const auto file = KeyValueFile::parse(text, std::move(origin));
    const auto& where = file.origin();
    ExperimentConfig config;

    std::vector<std::string> source_order;
    std::map<std::string, SourceDraft> sources;
    std::map<std::string, MetricDraft> metrics;
    auto resolve_path = [&base_dir](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };

    std::vector<std::string> canonical;
    for (const auto& entry : file.entries()) {
        if (!excluded_from_hash(entry.key)) {
            canonical.push_back(entry.key + "=" + entry.value + "\n");
        }
        const EntryReader in(entry, where);
        const auto parts = split(entry.key, '.');
        const auto head = parts[0];

        if (parts.size() == 1) {
            if (head == "name") {
                config.name = in.text();
            } else if (head == "seed") {
                config.seed = in.u64();
            } else if (head == "output") {
                config.output_dir = resolve_path(in.text());
            } else if (head == "workers") {
                config.workers = static_cast<unsigned>(in.u64());
            } else if (head == "normalize") {
                config.normalize = in.boolean();
            } else {
                in.fail("unknown key");
            }
        } else if (head == "source" && parts.size() == 3) {
            const std::string name(parts[1]);
            auto [it, inserted] = sources.try_emplace(name);
            if (inserted) {
                source_order.push_back(name);
                it->second.config.name = name;
                it->second.line = entry.line;
            }
            auto& draft = it->second;
            const auto field = parts[2];
            if (field == "anchors") {
                draft.config.anchors = resolve_path(in.text());
            } else if (field == "validation") {
                draft.config.validation = resolve_path(in.text());
                draft.has_validation = true;
            } else if (field == "test") {
                draft.config.test = resolve_path(in.text());
                draft.has_test = true;
            } else if (field == "knn_anchors") {
                const auto v = in.text();
                if (v == "train" || v == "anchors") {
                    draft.config.knn_anchors = AnchorRole::train;
                } else if (v == "validation") {
                    draft.config.knn_anchors = AnchorRole::validation;
                } else {
                    in.fail("expected 'train' or 'validation'");
                }
            } else if (field == "metrics") {
                draft.metric_names = in.list();
            } else {
                in.fail("unknown source field");
            }
        } else if (head == "metric" && parts.size() == 3) {
            auto& draft = metrics[std::string(parts[1])];
            if (draft.line == 0) {
                draft.line = entry.line;
            }
            const auto field = parts[2];
            try {
                if (field == "kind") {
                    draft.kind = parse_metric_kind(in.text());
                    if (!draft.kind) {
                        in.fail("unknown metric kind '" + entry.value + "'");
                    }
                } else if (field == "columns") {
                    draft.columns = ColumnSelector::parse(in.text());
                } else if (field == "image") {
                    draft.image = ColumnSelector::parse(in.text());
                } else if (field == "reconstruction") {
                    draft.reconstruction = ColumnSelector::parse(in.text());
                } else if (field == "k" || field == "T" || field == "emit_intermediate") {
                    draft.params[std::string(field)] = in.real();
                } else {
                    in.fail("unknown metric field");
                }
            } catch (const ConfigError& e) {
                const std::string msg = e.what();
                if (msg.starts_with(where)) {
                    throw;
                }
                in.fail(msg);
            }
        } else if (head == "permutation" && parts.size() == 2) {
            const auto field = parts[1];
            auto& perm = config.permutation;
            if (field == "count") {
                perm.permutations = in.u64();
            } else if (field == "sample_size") {
                perm.sample_size = in.u64();
            } else if (field == "statistic") {
                const auto s = parse_statistic(in.text());
                if (!s) {
                    in.fail("expected mrpp, auc or mean-difference");
                }
                perm.statistic = *s;
            } else if (field == "dissimilarity") {
                const auto d = parse_dissimilarity(in.text());
                if (!d) {
                    in.fail("expected euclidean or one-minus-cosine");
                }
                perm.dissimilarity = *d;
            } else if (field == "weighting") {
                const auto w = parse_weighting(in.text());
                if (!w) {
                    in.fail("expected proportional, inverse or uniform");
                }
                perm.weighting = *w;
            } else if (field == "exact") {
                perm.exact = in.boolean();
            } else if (field == "keep_null") {
                perm.keep_null = in.boolean();
            } else if (field == "workers") {
                perm.workers = static_cast<unsigned>(in.u64());
            } else {
                in.fail("unknown permutation field");
            }
        } else if (head == "matrix" && parts.size() == 2) {
            if (parts[1] == "rows") {
                config.rows = in.list();
            } else if (parts[1] == "cols") {
                config.cols = in.list();
            } else {
                in.fail("unknown matrix field");
            }
        } else if (head == "ensemble" && parts.size() == 2) {
            const auto field = parts[1];
            auto& ens = config.ensemble;
            if (field == "ind_labels") {
                ens.ind_labels = in.list();
            } else if (field == "ood_labels") {
                ens.ood_labels = in.list();
            } else if (field == "fit_fraction") {
                ens.fit_fraction = in.real();
                if (!(ens.fit_fraction > 0.0 && ens.fit_fraction < 1.0)) {
                    in.fail("must lie strictly between 0 and 1");
                }
            } else if (field == "seed") {
                ens.seed = in.u64();
            } else if (field == "splits") {
                ens.splits = in.u64();
                if (ens.splits < 1) {
                    in.fail("must be at least 1");
                }
            } else {
                in.fail("unknown ensemble field");
            }
        } else {
            in.fail("unknown key");
        }
    }

    std::sort(canonical.begin(), canonical.end());
    for (const auto& line : canonical) {
        config.canonical_text += line;
    }

    if (source_order.empty()) {
        throw ConfigError(where + ": no source.<name>.* entries");
    }
    const bool prefix_names = source_order.size() > 1;
    for (const auto& name : source_order) {
        auto& draft = sources.at(name);
        const auto here = where + ":" + std::to_string(draft.line) + ": source '" + name + "'";
        if (!draft.has_validation || !draft.has_test) {
            throw ConfigError(here + " needs both validation and test paths");
        }
        if (draft.metric_names.empty()) {
            throw ConfigError(here + " lists no metrics");
        }
        bool needs_anchors = false;
        for (const auto& mname : draft.metric_names) {
            const auto it = metrics.find(mname);
            if (it == metrics.end()) {
                throw ConfigError(here + " references undefined metric '" + mname + "'");
            }
            const auto& m = it->second;
            if (!m.kind) {
                throw ConfigError(where + ":" + std::to_string(m.line) + ": metric '" + mname + "' has no kind");
            }
            MetricSpec spec;
            spec.name = prefix_names ? name + "/" + mname : mname;
            spec.kind = *m.kind;
            spec.params = m.params;
            const bool recon = spec.kind == MetricKind::recon_l2 || spec.kind == MetricKind::recon_ip;
            const auto defaults = default_inputs(spec.kind);
            if (recon) {
                if (m.columns) {
                    throw ConfigError(where + ":" + std::to_string(m.line) + ": metric '" + mname +
                                      "' takes image/reconstruction selectors, not columns");
                }
                spec.inputs = {m.image.value_or(defaults[0]), m.reconstruction.value_or(defaults[1])};
            } else {
                if (m.image || m.reconstruction) {
                    throw ConfigError(where + ":" + std::to_string(m.line) + ": metric '" + mname +
                                      "' takes a columns selector only");
                }
                spec.inputs = {m.columns.value_or(defaults[0])};
            }
            needs_anchors = needs_anchors || spec.kind == MetricKind::knn_l2 || spec.kind == MetricKind::knn_cosine;
            draft.config.metrics.push_back(std::move(spec));
        }
        if (needs_anchors && draft.config.knn_anchors == AnchorRole::train && !draft.config.anchors) {
            throw ConfigError(here + " uses KNN metrics with train anchors but has no anchors path");
        }
        config.sources.push_back(std::move(draft.config));
    }

    try {
        config.permutation.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open config file '" + path.string() + "'");
    }
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse_config(text, path.parent_path(), path.string());
}

void validate_paths(const ExperimentConfig& config) {
    auto require = [](const std::filesystem::path& p, const std::string& what) {
        if (!std::filesystem::is_regular_file(p)) {
            throw ConfigError(what + " '" + p.string() + "' does not exist");
        }
    };
    for (const auto& s : config.sources) {
        if (s.anchors) {
            require(*s.anchors, "source '" + s.name + "' anchors");
        }
        require(s.validation, "source '" + s.name + "' validation set");
        require(s.test, "source '" + s.name + "' test set");
    }
}

}  // namespace oodperm
