#include "slanc/json_io.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "slanc/errors.hpp"

namespace slanc::json_io {

std::string format_double(double v) {
    if (!std::isfinite(v)) return "null";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s(buf);
    // keep the token a JSON float so it parses back as a double
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
}

namespace {

void emit(const nlohmann::json& j, int indent, int depth, std::string& out) {
    const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
    const std::string close_pad(static_cast<std::size_t>(indent * depth), ' ');
    const char* nl = indent > 0 ? "\n" : "";
    switch (j.type()) {
    case nlohmann::json::value_t::object: {
        if (j.empty()) {
            out += "{}";
            return;
        }
        out += "{";
        out += nl;
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!first) {
                out += ",";
                out += nl;
            }
            first = false;
            out += pad;
            out += nlohmann::json(it.key()).dump();
            out += indent > 0 ? ": " : ":";
            emit(it.value(), indent, depth + 1, out);
        }
        out += nl;
        out += close_pad;
        out += "}";
        return;
    }
    case nlohmann::json::value_t::array: {
        if (j.empty()) {
            out += "[]";
            return;
        }
        // Arrays of scalars stay on one line.
        const bool flat = std::all_of(j.begin(), j.end(), [](const auto& e) { return e.is_primitive(); });
        out += "[";
        bool first = true;
        for (const auto& e : j) {
            if (!first) out += flat ? ", " : ",";
            if (!flat) {
                out += nl;
                out += pad;
            }
            first = false;
            emit(e, indent, depth + 1, out);
        }
        if (!flat) {
            out += nl;
            out += close_pad;
        }
        out += "]";
        return;
    }
    case nlohmann::json::value_t::number_float:
        out += format_double(j.get<double>());
        return;
    default:
        out += j.dump();
        return;
    }
}

} // namespace

std::string dump(const nlohmann::json& j, int indent) {
    std::string out;
    emit(j, indent, 0, out);
    if (indent > 0) out += "\n";
    return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace slanc::json_io
