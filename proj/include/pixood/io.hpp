#pragma once

// Point-set files (binary PTS1/LBL1 and CSV), key = value config files and
// atomic file replacement.

#include "pixood/core.hpp"

#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

namespace pixood::io {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace detail {

template <typename T>
void put(std::string& buf, T value) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    buf.append(bytes, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    template <typename T>
    T get(const char* what) {
        if (pos_ + sizeof(T) > data_.size())
            throw FormatError(FormatError::Kind::truncated, std::string("truncated payload reading ") + what);
        T value;
        std::memcpy(&value, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    void expect_magic(std::string_view magic) {
        if (data_.size() < magic.size() || std::string_view(data_).substr(0, magic.size()) != magic)
            throw FormatError(FormatError::Kind::bad_magic, "bad magic, expected \"" + std::string(magic) + "\"");
        pos_ = magic.size();
    }

    std::size_t remaining() const { return data_.size() - pos_; }

private:
    std::string data_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes to a sibling temp file, then renames it over `path`.
inline void write_file_atomic(const fs::path& path, const std::string& contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

// ---- binary ---------------------------------------------------------------

/// PTS1 payload. Coordinates are narrowed to float32.
inline std::string encode_points(const Matrix& points) {
    std::string buf = "PTS1";
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(points.cols()));
    detail::put<std::uint64_t>(buf, static_cast<std::uint64_t>(points.rows()));
    buf.reserve(buf.size() + static_cast<std::size_t>(points.size()) * 4);
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        for (Eigen::Index j = 0; j < points.cols(); ++j) detail::put<float>(buf, static_cast<float>(points(i, j)));
    return buf;
}

inline Matrix decode_points(std::string data) {
    detail::Reader r(std::move(data));
    r.expect_magic("PTS1");
    const auto dim = r.get<std::uint32_t>("dimension");
    const auto n = r.get<std::uint64_t>("point count");
    if (dim == 0 || n == 0) throw FormatError(FormatError::Kind::count_mismatch, "points file has N = 0 or D = 0");
    if (r.remaining() != n * dim * sizeof(float)) {
        throw FormatError(r.remaining() < n * dim * sizeof(float) ? FormatError::Kind::truncated
                                                                   : FormatError::Kind::count_mismatch,
                          "points payload size does not match header");
    }
    Matrix points(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        for (Eigen::Index j = 0; j < points.cols(); ++j) points(i, j) = r.get<float>("coordinate");
    return points;
}

inline std::string encode_labels(const std::vector<int>& labels) {
    std::string buf = "LBL1";
    detail::put<std::uint64_t>(buf, labels.size());
    for (int l : labels) detail::put<std::int32_t>(buf, l);
    return buf;
}

inline std::vector<int> decode_labels(std::string data) {
    detail::Reader r(std::move(data));
    r.expect_magic("LBL1");
    const auto n = r.get<std::uint64_t>("label count");
    if (r.remaining() < n * sizeof(std::int32_t))
        throw FormatError(FormatError::Kind::truncated, "labels payload shorter than header count");
    if (r.remaining() > n * sizeof(std::int32_t))
        throw FormatError(FormatError::Kind::count_mismatch, "labels payload longer than header count");
    std::vector<int> labels(n);
    for (auto& l : labels) l = r.get<std::int32_t>("label");
    return labels;
}

inline std::vector<int> read_labels(const fs::path& path) { return decode_labels(read_file(path)); }
inline void write_labels(const std::vector<int>& labels, const fs::path& path) {
    write_file_atomic(path, encode_labels(labels));
}

/// Builds a Dataset from points and optional labels, checking they agree.
inline Dataset assemble(Matrix points, std::optional<std::vector<int>> labels, int class_count = 0) {
    if (labels && labels->size() != static_cast<std::size_t>(points.rows()))
        throw FormatError(FormatError::Kind::count_mismatch,
                          "label count " + std::to_string(labels->size()) + " does not match point count " +
                              std::to_string(points.rows()));
    Dataset ds = make_dataset(std::move(points), std::move(labels));
    if (class_count > ds.class_count) ds.class_count = class_count;
    return ds;
}

// ---- CSV --------------------------------------------------------------------

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw FormatError(FormatError::Kind::parse, "cannot parse number \"" + std::string(s) + "\"");
    return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

/// Parsed CSV: header names and numeric rows.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return j;
        throw FormatError(FormatError::Kind::parse, "missing CSV column \"" + std::string(name) + "\"");
    }
};

inline Table parse_csv(const std::string& text) {
    Table t;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split(line);
        if (first) {
            for (auto c : cells) t.header.emplace_back(c);
            first = false;
            continue;
        }
        if (cells.size() != t.header.size())
            throw FormatError(FormatError::Kind::count_mismatch, "CSV row has " + std::to_string(cells.size()) +
                                                                     " cells, header has " +
                                                                     std::to_string(t.header.size()));
        std::vector<double> row;
        row.reserve(cells.size());
        for (auto c : cells) row.push_back(parse_double(c));
        t.rows.push_back(std::move(row));
    }
    if (first) throw FormatError(FormatError::Kind::parse, "empty CSV");
    return t;
}

inline std::string points_to_csv(const Dataset& ds) {
    std::ostringstream out;
    for (std::size_t j = 0; j < ds.dim(); ++j) out << (j ? "," : "") << 'x' << j;
    if (ds.labels) out << ",label";
    out << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < ds.dim(); ++j)
            out << (j ? "," : "") << format_double(ds.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        if (ds.labels) out << ',' << (*ds.labels)[i];
        out << '\n';
    }
    return out.str();
}

inline Dataset points_from_csv(const std::string& text) {
    const Table t = parse_csv(text);
    std::size_t dim = 0;
    while (dim < t.header.size() && t.header[dim] == "x" + std::to_string(dim)) ++dim;
    const bool has_label = dim + 1 == t.header.size() && t.header[dim] == "label";
    if (dim == 0 || (dim != t.header.size() && !has_label))
        throw FormatError(FormatError::Kind::parse, "CSV header must be x0,...,x{D-1}[,label]");
    if (t.rows.empty()) throw FormatError(FormatError::Kind::count_mismatch, "CSV has no points");
    Matrix points(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(dim));
    std::optional<std::vector<int>> labels;
    if (has_label) labels.emplace();
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        for (std::size_t j = 0; j < dim; ++j)
            points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.rows[i][j];
        if (has_label) {
            const double l = t.rows[i][dim];
            if (l != std::floor(l)) throw FormatError(FormatError::Kind::parse, "non-integer label in CSV");
            labels->push_back(static_cast<int>(l));
        }
    }
    return assemble(std::move(points), std::move(labels));
}

// ---- dataset files ---------------------------------------------------------

inline bool is_csv(const fs::path& path) { return path.extension() == ".csv"; }

/// Reads a points file (".csv" selects CSV, anything else PTS1). A PTS1 file
/// may be accompanied by an LBL1 file passed as `labels_path`.
inline Dataset read_points(const fs::path& points_path, const std::optional<fs::path>& labels_path = std::nullopt) {
    if (is_csv(points_path)) {
        Dataset ds = points_from_csv(read_file(points_path));
        if (labels_path) {
            auto labels = read_labels(*labels_path);
            return assemble(std::move(ds.points), std::move(labels));
        }
        return ds;
    }
    Matrix points = decode_points(read_file(points_path));
    std::optional<std::vector<int>> labels;
    if (labels_path) labels = read_labels(*labels_path);
    return assemble(std::move(points), std::move(labels));
}

/// Writes the dataset; for PTS1 the labels go to `labels_path` when given.
inline void write_points(const Dataset& ds, const fs::path& points_path,
                         const std::optional<fs::path>& labels_path = std::nullopt) {
    if (is_csv(points_path)) {
        write_file_atomic(points_path, points_to_csv(ds));
        return;
    }
    write_file_atomic(points_path, encode_points(ds.points));
    if (labels_path) {
        if (!ds.labels) throw InvalidArgument("write_points: labels path given but dataset has no labels");
        write_labels(*ds.labels, *labels_path);
    }
}

// ---- key = value -------------------------------------------------------------

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

/// Parses "key = value" lines. '#' starts a comment.
inline KeyValues parse_key_values(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw FormatError(FormatError::Kind::parse, "line " + std::to_string(lineno) + ": expected key = value");
        kv[trim(std::string_view(stripped).substr(0, eq))] = trim(std::string_view(stripped).substr(eq + 1));
    }
    return kv;
}

inline std::string format_key_values(const KeyValues& kv) {
    std::ostringstream out;
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
    return out.str();
}

inline KeyValues read_key_values(const fs::path& path) { return parse_key_values(read_file(path)); }

inline const std::string& require(const KeyValues& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(FormatError::Kind::parse, "missing key \"" + key + "\"");
    return it->second;
}

inline long long parse_int(std::string_view s) {
    long long v = 0;
    const std::string t = trim(s);
    auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw FormatError(FormatError::Kind::parse, "cannot parse integer \"" + t + "\"");
    return v;
}

inline bool parse_bool(std::string_view s) {
    const std::string t = trim(s);
    if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
    if (t == "0" || t == "false" || t == "no" || t == "off") return false;
    throw FormatError(FormatError::Kind::parse, "cannot parse boolean \"" + t + "\"");
}

}  // namespace pixood::io
