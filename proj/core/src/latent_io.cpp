#include "oodperm/latent_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "oodperm/error.hpp"
#include "oodperm/random.hpp"

namespace oodperm {

namespace {

constexpr std::string_view kKindNames[] = {
    "feature", "logit", "belief", "image", "reconstruction", "iterate-x", "iterate-z", "iterate-y", "metric",
};

std::string position(std::size_t line, std::size_t column) {
    return "line " + std::to_string(line) + ", column " + std::to_string(column);
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

void check_csv_safe(std::string_view text, std::string_view what) {
    if (text.find_first_of(",\n\r\"") != std::string_view::npos) {
        throw DataError(std::string(what) + " '" + std::string(text) +
                        "' contains a character that cannot be written unquoted to CSV");
    }
}

std::string format_double(double value) {
    char buffer[32];
    const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, result.ptr);
}

// Little-endian primitives for the BIN format.
template <typename T>
void put_le(std::string& out, T value) {
    for (std::size_t b = 0; b < sizeof(T); ++b) {
        out.push_back(static_cast<char>((value >> (8 * b)) & 0xFF));
    }
}

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    template <typename T>
    T get(std::string_view what) {
        if (data_.size() - offset_ < sizeof(T)) {
            throw DataError("bin: truncated file while reading " + std::string(what) + " at byte " +
                            std::to_string(offset_));
        }
        T value = 0;
        for (std::size_t b = 0; b < sizeof(T); ++b) {
            value |= static_cast<T>(static_cast<unsigned char>(data_[offset_ + b])) << (8 * b);
        }
        offset_ += sizeof(T);
        return value;
    }

    std::string get_string(std::string_view what) {
        const auto length = get<std::uint32_t>(what);
        if (data_.size() - offset_ < length) {
            throw DataError("bin: truncated string for " + std::string(what) + " at byte " + std::to_string(offset_));
        }
        std::string text(data_.substr(offset_, length));
        offset_ += length;
        return text;
    }

    bool at_end() const { return offset_ == data_.size(); }

private:
    std::string_view data_;
    std::size_t offset_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path.string() + "' for reading");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open '" + path.string() + "' for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw DataError("write to '" + path.string() + "' failed");
    }
}

Column parse_column_header(std::string_view field, std::size_t column) {
    field = trim(field);
    const auto colon = field.rfind(':');
    Column parsed;
    if (colon == std::string_view::npos) {
        parsed.name = std::string(field);
    } else {
        const auto kind = parse_column_kind(field.substr(colon + 1));
        if (!kind) {
            throw DataError("malformed header at " + position(1, column) + ": unknown column kind '" +
                            std::string(field.substr(colon + 1)) + "'");
        }
        parsed.name = std::string(field.substr(0, colon));
        parsed.kind = *kind;
    }
    if (parsed.name.empty()) {
        throw DataError("malformed header at " + position(1, column) + ": empty column name");
    }
    return parsed;
}

LatentResponseSet decode_bin(std::string_view bytes, std::string name) {
    if (bytes.size() < 4 || bytes.substr(0, 4) != "LRS1") {
        throw DataError("bin: missing LRS1 magic");
    }
    ByteReader reader(bytes.substr(4));
    const auto n = reader.get<std::uint32_t>("row count");
    const auto c = reader.get<std::uint32_t>("column count");

    std::vector<Column> columns;
    columns.reserve(c);
    for (std::uint32_t j = 0; j < c; ++j) {
        columns.push_back(parse_column_header(reader.get_string("column header"), j + 3));
    }
    std::vector<std::string> ids(n), groups(n);
    for (auto& id : ids) {
        id = reader.get_string("sample id");
    }
    for (auto& g : groups) {
        g = reader.get_string("group label");
    }
    std::vector<double> payload(static_cast<std::size_t>(n) * c);
    for (auto& v : payload) {
        v = std::bit_cast<double>(reader.get<std::uint64_t>("payload"));
    }
    if (!reader.at_end()) {
        throw DataError("bin: trailing bytes after payload");
    }
    return LatentResponseSet(std::move(name), std::move(columns), std::move(ids), std::move(groups),
                             Matrix(n, c, std::move(payload)));
}

std::string encode_bin(const LatentResponseSet& set) {
    std::string out = "LRS1";
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.dimension()));
    auto put_string = [&out](std::string_view s) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
        out.append(s);
    };
    for (const auto& col : set.columns()) {
        put_string(col.name + ":" + std::string(to_string(col.kind)));
    }
    for (const auto& id : set.ids()) {
        put_string(id);
    }
    for (const auto& g : set.groups()) {
        put_string(g);
    }
    for (const double v : set.values().data()) {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

}  // namespace

std::string_view to_string(ColumnKind kind) {
    return kKindNames[static_cast<std::size_t>(kind)];
}

std::optional<ColumnKind> parse_column_kind(std::string_view text) {
    for (std::size_t i = 0; i < std::size(kKindNames); ++i) {
        if (kKindNames[i] == text) {
            return static_cast<ColumnKind>(i);
        }
    }
    return std::nullopt;
}

LatentResponseSet::LatentResponseSet(std::string name, std::vector<Column> columns, std::vector<std::string> ids,
                                     std::vector<std::string> groups, Matrix values)
    : name_(std::move(name)),
      columns_(std::move(columns)),
      ids_(std::move(ids)),
      groups_(std::move(groups)),
      values_(std::move(values)) {
    if (ids_.size() != groups_.size() || values_.rows() != ids_.size()) {
        throw DataError(name_ + ": ids, groups and value rows disagree in count");
    }
    if (values_.cols() != columns_.size()) {
        throw DataError(name_ + ": row dimensionality " + std::to_string(values_.cols()) +
                        " does not match column count " + std::to_string(columns_.size()));
    }
    std::unordered_set<std::string_view> names;
    for (const auto& col : columns_) {
        if (!names.insert(col.name).second) {
            throw DataError(name_ + ": duplicate column name '" + col.name + "'");
        }
    }
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (!seen.insert(ids_[i]).second) {
            throw DataError(name_ + ": duplicate sample id '" + ids_[i] + "' at row " + std::to_string(i + 1));
        }
        for (std::size_t j = 0; j < columns_.size(); ++j) {
            if (!std::isfinite(values_(i, j))) {
                throw DataError(name_ + ": non-finite value at row " + std::to_string(i + 1) + ", column '" +
                                columns_[j].name + "'");
            }
        }
    }
}

std::optional<std::size_t> LatentResponseSet::find_column(std::string_view column_name) const {
    for (std::size_t j = 0; j < columns_.size(); ++j) {
        if (columns_[j].name == column_name) {
            return j;
        }
    }
    return std::nullopt;
}

std::vector<std::size_t> LatentResponseSet::columns_of_kind(ColumnKind kind) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < columns_.size(); ++j) {
        if (columns_[j].kind == kind) {
            out.push_back(j);
        }
    }
    return out;
}

std::vector<std::string> LatentResponseSet::group_labels() const {
    std::set<std::string> unique(groups_.begin(), groups_.end());
    return {unique.begin(), unique.end()};
}

bool LatentResponseSet::has_group(std::string_view label) const {
    return std::find(groups_.begin(), groups_.end(), label) != groups_.end();
}

std::vector<std::size_t> LatentResponseSet::rows_in_group(std::string_view label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < groups_.size(); ++i) {
        if (groups_[i] == label) {
            out.push_back(i);
        }
    }
    return out;
}

LatentResponseSet LatentResponseSet::subset(std::span<const std::size_t> rows, std::string new_name) const {
    std::vector<std::string> ids, groups;
    ids.reserve(rows.size());
    groups.reserve(rows.size());
    Matrix values(rows.size(), dimension());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto src = rows[r];
        ids.push_back(ids_[src]);
        groups.push_back(groups_[src]);
        std::ranges::copy(row(src), values.row(r).begin());
    }
    return LatentResponseSet(std::move(new_name), columns_, std::move(ids), std::move(groups), std::move(values));
}

void validate(const MetricVector& vec) {
    if (vec.values.size() != vec.names.size()) {
        throw DataError("metric vector for '" + vec.sample_id + "' has " + std::to_string(vec.values.size()) +
                        " values but " + std::to_string(vec.names.size()) + " names");
    }
    for (std::size_t i = 0; i < vec.values.size(); ++i) {
        if (!std::isfinite(vec.values[i])) {
            throw DataError("metric '" + vec.names[i] + "' is not finite for sample '" + vec.sample_id + "'");
        }
    }
}

GroupAssignment::GroupAssignment(std::vector<int> labels, int num_groups)
    : labels_(std::move(labels)), num_groups_(num_groups), sizes_(num_groups > 0 ? num_groups : 0, 0) {
    if (num_groups_ < 1) {
        throw DataError("group assignment needs at least one group");
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        const int g = labels_[i];
        if (g < 0 || g >= num_groups_) {
            throw DataError("group index " + std::to_string(g) + " at row " + std::to_string(i) + " outside [0, " +
                            std::to_string(num_groups_) + ")");
        }
        ++sizes_[g];
    }
    for (int k = 0; k < num_groups_; ++k) {
        if (sizes_[k] == 0) {
            throw DataError("group " + std::to_string(k) + " has no members");
        }
    }
}

GroupAssignment GroupAssignment::blocks(std::span<const std::size_t> sizes) {
    std::vector<int> labels;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        labels.insert(labels.end(), sizes[k], static_cast<int>(k));
    }
    return GroupAssignment(std::move(labels), static_cast<int>(sizes.size()));
}

FileFormat format_from_path(const std::filesystem::path& path) {
    return path.extension() == ".bin" ? FileFormat::bin : FileFormat::csv;
}

LatentResponseSet parse_csv(std::string_view text, std::string name) {
    std::vector<std::string_view> lines;
    {
        std::size_t start = 0;
        while (start < text.size()) {
            auto end = text.find('\n', start);
            if (end == std::string_view::npos) {
                end = text.size();
            }
            lines.push_back(text.substr(start, end - start));
            start = end + 1;
        }
    }
    while (!lines.empty() && trim(lines.back()).empty()) {
        lines.pop_back();
    }
    if (lines.empty()) {
        throw DataError("malformed header: file is empty");
    }
    // Tolerate a UTF-8 byte order mark.
    if (lines[0].starts_with("\xEF\xBB\xBF")) {
        lines[0].remove_prefix(3);
    }

    const auto header = split_fields(lines[0]);
    if (header.size() < 2 || trim(header[0]) != "id" || trim(header[1]) != "group") {
        throw DataError("malformed header at " + position(1, 1) + ": expected 'id,group,...'");
    }
    std::vector<Column> columns;
    for (std::size_t j = 2; j < header.size(); ++j) {
        columns.push_back(parse_column_header(header[j], j + 1));
    }

    const std::size_t n = lines.size() - 1;
    const std::size_t c = columns.size();
    std::vector<std::string> ids, groups;
    ids.reserve(n);
    groups.reserve(n);
    std::vector<double> payload;
    payload.reserve(n * c);
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t line_no = i + 2;
        const auto fields = split_fields(lines[i + 1]);
        if (fields.size() != c + 2) {
            throw DataError("ragged row at line " + std::to_string(line_no) + ": expected " +
                            std::to_string(c + 2) + " fields, found " + std::to_string(fields.size()));
        }
        auto id = std::string(trim(fields[0]));
        if (id.empty()) {
            throw DataError("empty sample id at " + position(line_no, 1));
        }
        if (!seen.insert(id).second) {
            throw DataError("duplicate sample id '" + id + "' at " + position(line_no, 1));
        }
        ids.push_back(std::move(id));
        groups.emplace_back(trim(fields[1]));
        for (std::size_t j = 0; j < c; ++j) {
            const auto cell = trim(fields[j + 2]);
            double value = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
            if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
                throw DataError("non-numeric cell '" + std::string(cell) + "' at " + position(line_no, j + 3));
            }
            if (!std::isfinite(value)) {
                throw DataError("non-finite cell '" + std::string(cell) + "' at " + position(line_no, j + 3));
            }
            payload.push_back(value);
        }
    }
    return LatentResponseSet(std::move(name), std::move(columns), std::move(ids), std::move(groups),
                             Matrix(n, c, std::move(payload)));
}

std::string format_csv(const LatentResponseSet& set) {
    std::string out = "id,group";
    for (const auto& col : set.columns()) {
        check_csv_safe(col.name, "column name");
        out += ',';
        out += col.name;
        out += ':';
        out += to_string(col.kind);
    }
    out += '\n';
    for (std::size_t i = 0; i < set.size(); ++i) {
        check_csv_safe(set.ids()[i], "sample id");
        check_csv_safe(set.groups()[i], "group label");
        out += set.ids()[i];
        out += ',';
        out += set.groups()[i];
        for (const double v : set.row(i)) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

LatentResponseSet read_response_set(const std::filesystem::path& path, FileFormat format) {
    const auto bytes = read_file(path);
    auto name = path.stem().string();
    try {
        return format == FileFormat::bin ? decode_bin(bytes, std::move(name)) : parse_csv(bytes, std::move(name));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

LatentResponseSet read_response_set(const std::filesystem::path& path) {
    return read_response_set(path, format_from_path(path));
}

void write_response_set(const LatentResponseSet& set, const std::filesystem::path& path, FileFormat format) {
    write_file(path, format == FileFormat::bin ? encode_bin(set) : format_csv(set));
}

void write_response_set(const LatentResponseSet& set, const std::filesystem::path& path) {
    write_response_set(set, path, format_from_path(path));
}

GroupSample select_group(const LatentResponseSet& set, std::string_view label, std::size_t sample_size,
                         std::uint64_t seed) {
    if (sample_size < 1) {
        throw DataError("select_group: sample size must be at least 1");
    }
    auto rows = set.rows_in_group(label);
    if (rows.empty()) {
        throw DataError(set.name() + ": unknown group label '" + std::string(label) + "'");
    }
    const Philox4x32::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    struct Keyed {
        std::uint64_t key;
        std::size_t row;
    };
    std::vector<Keyed> keyed;
    keyed.reserve(rows.size());
    for (const auto r : rows) {
        const std::uint64_t h = fnv1a64(set.ids()[r]);
        const auto block = Philox4x32::block(
            {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32), 0x5e1ec7u, 0u}, key);
        keyed.push_back({(static_cast<std::uint64_t>(block[0]) << 32) | block[1], r});
    }
    std::ranges::sort(keyed, [&set](const Keyed& a, const Keyed& b) {
        if (a.key != b.key) {
            return a.key < b.key;
        }
        return set.ids()[a.row] < set.ids()[b.row];
    });
    GroupSample result;
    result.clamped = keyed.size() < sample_size;
    const std::size_t take = std::min(sample_size, keyed.size());
    std::vector<std::size_t> chosen(take);
    for (std::size_t i = 0; i < take; ++i) {
        chosen[i] = keyed[i].row;
    }
    result.rows = set.subset(chosen, set.name() + "/" + std::string(label));
    return result;
}

}  // namespace oodperm
