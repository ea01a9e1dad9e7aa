#include "slanc/safetensors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

#include "slanc/fp16.hpp"
#include "slanc/json_io.hpp"

namespace slanc::safetensors {

using Kind = SafetensorsError::Kind;

std::string to_string(DType t) {
    switch (t) {
    case DType::F32: return "F32";
    case DType::F16: return "F16";
    case DType::BF16: return "BF16";
    }
    return "?";
}

std::size_t element_size(DType t) { return t == DType::F32 ? 4 : 2; }

namespace {

std::optional<DType> parse_dtype(const std::string& s) {
    if (s == "F32") return DType::F32;
    if (s == "F16") return DType::F16;
    if (s == "BF16") return DType::BF16;
    return std::nullopt;
}

std::uint64_t read_le64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::size_t numel(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

float bf16_to_float(std::uint16_t b) { return std::bit_cast<float>(static_cast<std::uint32_t>(b) << 16); }

std::uint16_t float_to_bf16(float f) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    if ((u & 0x7F800000u) == 0x7F800000u && (u & 0x007FFFFFu) != 0) return 0x7FC0;
    const std::uint32_t rounding = 0x7FFFu + ((u >> 16) & 1u);
    return static_cast<std::uint16_t>((u + rounding) >> 16);
}

} // namespace

File File::parse(std::vector<std::uint8_t> bytes) {
    File f;
    f.bytes_ = std::move(bytes);
    const auto& b = f.bytes_;
    if (b.size() < 8) throw SafetensorsError(Kind::Truncated, "", "safetensors: file shorter than 8 bytes");
    const std::uint64_t header_len = read_le64(b.data());
    if (header_len > b.size() - 8) {
        throw SafetensorsError(Kind::Truncated, "",
                               "safetensors: header length " + std::to_string(header_len) +
                                   " exceeds file size " + std::to_string(b.size()));
    }
    f.data_start_ = 8 + static_cast<std::size_t>(header_len);
    const std::size_t data_size = b.size() - f.data_start_;

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(b.begin() + 8, b.begin() + static_cast<std::ptrdiff_t>(f.data_start_));
    } catch (const nlohmann::json::exception& e) {
        throw SafetensorsError(Kind::MalformedHeader, "", std::string("safetensors: header is not JSON: ") + e.what());
    }
    if (!header.is_object()) throw SafetensorsError(Kind::MalformedHeader, "", "safetensors: header is not an object");

    for (const auto& [name, value] : header.items()) {
        if (name == "__metadata__") {
            if (!value.is_object()) throw SafetensorsError(Kind::MalformedHeader, name, "safetensors: bad __metadata__");
            for (const auto& [k, v] : value.items()) {
                if (!v.is_string())
                    throw SafetensorsError(Kind::MalformedHeader, name, "safetensors: metadata value for '" + k + "' is not a string");
                f.metadata_[k] = v.get<std::string>();
            }
            continue;
        }
        TensorEntry e;
        try {
            e.dtype = value.at("dtype").get<std::string>();
            e.shape = value.at("shape").get<std::vector<std::size_t>>();
            const auto offsets = value.at("data_offsets").get<std::vector<std::size_t>>();
            if (offsets.size() != 2) throw std::runtime_error("data_offsets must have two entries");
            e.begin = offsets[0];
            e.end = offsets[1];
        } catch (const std::exception& ex) {
            throw SafetensorsError(Kind::MalformedHeader, name,
                                   "safetensors: bad header entry for tensor '" + name + "': " + ex.what());
        }
        if (e.begin > e.end) {
            throw SafetensorsError(Kind::MalformedHeader, name, "safetensors: tensor '" + name + "' has begin > end");
        }
        if (e.end > data_size) {
            throw SafetensorsError(Kind::Truncated, name,
                                   "safetensors: tensor '" + name + "' extends past the end of the data section");
        }
        f.entries_.emplace(name, std::move(e));
    }
    return f;
}

File File::read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SafetensorsError(Kind::Io, "", "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(std::move(bytes));
}

const TensorEntry& File::entry(const std::string& name) const {
    const auto it = entries_.find(name);
    if (it == entries_.end()) throw SafetensorsError(Kind::MissingTensor, name, "missing tensor '" + name + "'");
    return it->second;
}

std::vector<double> File::values(const std::string& name) const {
    const TensorEntry& e = entry(name);
    const auto dtype = parse_dtype(e.dtype);
    if (!dtype) {
        throw SafetensorsError(Kind::UnknownDtype, name, "tensor '" + name + "' has unsupported dtype " + e.dtype);
    }
    const std::size_t n = numel(e.shape);
    const std::size_t width = element_size(*dtype);
    if (e.end - e.begin != n * width) {
        throw SafetensorsError(Kind::ShapeMismatch, name,
                               "tensor '" + name + "': shape " + shape_str(e.shape) + " needs " +
                                   std::to_string(n * width) + " bytes, offsets span " +
                                   std::to_string(e.end - e.begin));
    }
    const std::uint8_t* p = bytes_.data() + data_start_ + e.begin;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i, p += width) {
        switch (*dtype) {
        case DType::F32: {
            const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                    (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
            out[i] = std::bit_cast<float>(u);
            break;
        }
        case DType::F16:
            out[i] = fp16::decode(fp16::Fp16Bits(static_cast<std::uint16_t>(p[0] | (p[1] << 8))));
            break;
        case DType::BF16:
            out[i] = bf16_to_float(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
            break;
        }
    }
    return out;
}

std::vector<std::uint8_t> serialize(const std::vector<OutTensor>& tensors,
                                    const std::map<std::string, std::string>& metadata) {
    std::vector<const OutTensor*> ordered;
    for (const auto& t : tensors) ordered.push_back(&t);
    std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->name < b->name; });

    nlohmann::json header = nlohmann::json::object();
    if (!metadata.empty()) header["__metadata__"] = metadata;
    std::vector<std::uint8_t> data;
    for (const OutTensor* t : ordered) {
        if (numel(t->shape) != t->values.size()) {
            throw SafetensorsError(Kind::ShapeMismatch, t->name, "tensor '" + t->name + "': values do not match shape");
        }
        const std::size_t begin = data.size();
        for (const double v : t->values) {
            switch (t->dtype) {
            case DType::F32: {
                const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
                for (int k = 0; k < 4; ++k) data.push_back(static_cast<std::uint8_t>(u >> (8 * k)));
                break;
            }
            case DType::F16: {
                const auto u = fp16::encode(v).bits;
                data.push_back(static_cast<std::uint8_t>(u));
                data.push_back(static_cast<std::uint8_t>(u >> 8));
                break;
            }
            case DType::BF16: {
                const auto u = float_to_bf16(static_cast<float>(v));
                data.push_back(static_cast<std::uint8_t>(u));
                data.push_back(static_cast<std::uint8_t>(u >> 8));
                break;
            }
            }
        }
        header[t->name] = {{"dtype", to_string(t->dtype)}, {"shape", t->shape}, {"data_offsets", {begin, data.size()}}};
    }
    std::string h = header.dump();
    while (h.size() % 8 != 0) h.push_back(' ');

    std::vector<std::uint8_t> out;
    out.reserve(8 + h.size() + data.size());
    const std::uint64_t n = h.size();
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(n >> (8 * k)));
    out.insert(out.end(), h.begin(), h.end());
    out.insert(out.end(), data.begin(), data.end());
    return out;
}

void write(const std::filesystem::path& path, const std::vector<OutTensor>& tensors,
           const std::map<std::string, std::string>& metadata) {
    const auto bytes = serialize(tensors, metadata);
    json_io::write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

std::string NameMap::layer_tensor(const std::string& role, int layer) const {
    const auto it = roles.find(role);
    if (it == roles.end()) throw SafetensorsError(Kind::MissingTensor, role, "name map has no role '" + role + "'");
    const std::string idx = std::to_string(layer);
    auto substitute = [&](std::string s) {
        for (std::size_t pos = s.find("{i}"); pos != std::string::npos; pos = s.find("{i}", pos + idx.size()))
            s.replace(pos, 3, idx);
        return s;
    };
    if (it->second.find("{i}") != std::string::npos) return substitute(it->second);
    return substitute(layer_template) + it->second;
}

NameMap NameMap::from_json(const nlohmann::json& j) {
    NameMap m;
    try {
        m.layer_template = j.value("layer_template", std::string{});
        m.roles = j.at("roles").get<std::map<std::string, std::string>>();
        if (j.contains("transpose")) {
            for (const auto& r : j.at("transpose")) m.transpose.insert(r.get<std::string>());
        }
        if (j.contains("globals")) m.globals = j.at("globals").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("name map: ") + e.what());
    }
    return m;
}

NameMap NameMap::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open name map " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("name map " + path.string() + ": " + e.what());
    }
}

nlohmann::json NameMap::to_json() const {
    return {{"layer_template", layer_template},
            {"roles", roles},
            {"transpose", std::vector<std::string>(transpose.begin(), transpose.end())},
            {"globals", globals}};
}

NameMap NameMap::llama() {
    NameMap m;
    m.layer_template = "model.layers.{i}.";
    m.roles = {
        {"gamma1", "input_layernorm.weight"},
        {"gamma2", "post_attention_layernorm.weight"},
        {"w_q", "self_attn.q_proj.weight"},
        {"w_k", "self_attn.k_proj.weight"},
        {"w_v", "self_attn.v_proj.weight"},
        {"p", "self_attn.o_proj.weight"},
        {"e", "mlp.gate_proj.weight"},
        {"b", "mlp.up_proj.weight"},
        {"g", "mlp.down_proj.weight"},
    };
    m.transpose = {"w_q", "w_k", "w_v", "p", "e", "b", "g"};
    m.globals = {{"boundary_gamma", "model.norm.weight"}};
    return m;
}

NameMap NameMap::native() {
    NameMap m;
    m.layer_template = "layers.{i}.";
    m.roles = {
        {"gamma1", "norm1.gamma"}, {"beta1", "norm1.beta"}, {"gamma2", "norm2.gamma"}, {"beta2", "norm2.beta"},
        {"w_q", "attn.w_q"},       {"w_k", "attn.w_k"},     {"w_v", "attn.w_v"},     {"p", "attn.p"},
        {"e", "mlp.e"},            {"b", "mlp.b"},          {"g", "mlp.g"},
    };
    m.globals = {{"boundary_gamma", "boundary_norm.gamma"}, {"boundary_beta", "boundary_norm.beta"}};
    return m;
}

namespace {

class Loader {
public:
    Loader(const File& f, const NameMap& names) : f_(f), names_(names) {}

    bool has_layer_role(const std::string& role, int layer) const {
        return names_.roles.count(role) && f_.contains(names_.layer_tensor(role, layer));
    }
    bool has_global(const std::string& key) const {
        const auto it = names_.globals.find(key);
        return it != names_.globals.end() && f_.contains(it->second);
    }
    std::string global_name(const std::string& key) const {
        const auto it = names_.globals.find(key);
        if (it == names_.globals.end()) throw SafetensorsError(Kind::MissingTensor, key, "name map has no global '" + key + "'");
        return it->second;
    }

    std::vector<std::size_t> oriented_shape(const std::string& role, const std::string& tensor) const {
        auto shape = f_.entry(tensor).shape;
        if (names_.transpose.count(role) && shape.size() == 2) std::swap(shape[0], shape[1]);
        return shape;
    }

    linalg::RealVector vector(const std::string& tensor, std::size_t d) const {
        const auto& e = f_.entry(tensor);
        if (e.shape.size() != 1 || e.shape[0] != d) {
            throw SafetensorsError(Kind::ShapeMismatch, tensor,
                                   "tensor '" + tensor + "' has shape " + shape_str(e.shape) + ", expected [" +
                                       std::to_string(d) + "]");
        }
        return f_.values(tensor);
    }

    linalg::RealMatrix matrix(const std::string& role, const std::string& tensor, std::size_t rows, std::size_t cols) const {
        const auto& e = f_.entry(tensor);
        const bool transpose = names_.transpose.count(role) != 0;
        const std::vector<std::size_t> stored = transpose ? std::vector<std::size_t>{cols, rows}
                                                          : std::vector<std::size_t>{rows, cols};
        if (e.shape != stored) {
            throw SafetensorsError(Kind::ShapeMismatch, tensor,
                                   "tensor '" + tensor + "' has shape " + shape_str(e.shape) + ", expected " +
                                       shape_str(stored));
        }
        linalg::RealMatrix m(stored[0], stored[1], f_.values(tensor));
        return transpose ? m.transpose() : m;
    }

    linalg::RealVector layer_vector(const std::string& role, int layer, std::size_t d) const {
        return vector(names_.layer_tensor(role, layer), d);
    }
    linalg::RealMatrix layer_matrix(const std::string& role, int layer, std::size_t rows, std::size_t cols) const {
        return matrix(role, names_.layer_tensor(role, layer), rows, cols);
    }

    model::ModelConfig infer_config() const {
        model::ModelConfig c;
        const auto g0 = names_.layer_tensor("gamma1", 0);
        const auto& ge = f_.entry(g0);
        if (ge.shape.size() != 1) throw SafetensorsError(Kind::ShapeMismatch, g0, "tensor '" + g0 + "' is not a vector");
        c.d_model = static_cast<int>(ge.shape[0]);
        const auto e0 = names_.layer_tensor("e", 0);
        const auto e_shape = oriented_shape("e", e0);
        if (e_shape.size() != 2) throw SafetensorsError(Kind::ShapeMismatch, e0, "tensor '" + e0 + "' is not a matrix");
        c.mlp_hidden = static_cast<int>(e_shape[1]);
        int n = 0;
        while (has_layer_role("gamma1", n)) ++n;
        c.n_layers = n;
        c.norm_kind = has_layer_role("beta1", 0) ? model::NormKind::LayerNorm : model::NormKind::RMSNorm;
        c.mlp_kind = has_layer_role("b", 0) ? model::MlpKind::LlamaGated : model::MlpKind::Standard;
        c.nonlinearity = c.mlp_kind == model::MlpKind::LlamaGated ? model::Nonlinearity::SiLU : model::Nonlinearity::GeLU;
        c.residual_placement = model::ResidualPlacement::PreLN;
        c.boundary_norm = has_global("boundary_gamma");
        c.n_heads = 1;
        c.head_dim = c.d_model;
        return c;
    }

private:
    const File& f_;
    const NameMap& names_;
};

} // namespace

model::ModelGraph load_model(const File& file, const NameMap& names, const std::optional<model::ModelConfig>& config) {
    Loader loader(file, names);
    model::ModelGraph g;
    if (config) {
        g.config = *config;
    } else if (const auto it = file.metadata().find(kConfigMetadataKey); it != file.metadata().end()) {
        try {
            g.config = model::config_from_json(nlohmann::json::parse(it->second));
        } catch (const nlohmann::json::exception& e) {
            throw SafetensorsError(Kind::MalformedHeader, "", std::string("bad slanc_config metadata: ") + e.what());
        }
    } else {
        g.config = loader.infer_config();
    }
    if (const auto problems = model::check_config(g.config); !problems.empty()) {
        throw Error("invalid model config: " + problems.front());
    }

    const auto d = static_cast<std::size_t>(g.config.d_model);
    const auto m = static_cast<std::size_t>(g.config.mlp_hidden);
    const bool layer_norm = g.config.norm_kind == model::NormKind::LayerNorm;
    const bool gated = g.config.mlp_kind == model::MlpKind::LlamaGated;

    for (int i = 0; i < g.config.n_layers; ++i) {
        model::DecoderWeights l;
        l.gamma1 = loader.layer_vector("gamma1", i, d);
        l.gamma2 = loader.layer_vector("gamma2", i, d);
        if (layer_norm) {
            l.beta1 = loader.layer_vector("beta1", i, d);
            l.beta2 = loader.layer_vector("beta2", i, d);
        }
        l.w_q = loader.layer_matrix("w_q", i, d, d);
        l.w_k = loader.layer_matrix("w_k", i, d, d);
        l.w_v = loader.layer_matrix("w_v", i, d, d);
        l.p = loader.layer_matrix("p", i, d, d);
        l.e = loader.layer_matrix("e", i, d, m);
        if (gated) l.b = loader.layer_matrix("b", i, d, m);
        l.g = loader.layer_matrix("g", i, m, d);
        g.layers.push_back(std::move(l));
    }
    if (g.config.boundary_norm) {
        model::NormWeights n;
        n.gamma = loader.vector(loader.global_name("boundary_gamma"), d);
        if (layer_norm) n.beta = loader.vector(loader.global_name("boundary_beta"), d);
        g.boundary = std::move(n);
    }
    return g;
}

model::ModelGraph load_model(const std::filesystem::path& path, const NameMap& names,
                             const std::optional<model::ModelConfig>& config) {
    return load_model(File::read(path), names, config);
}

std::vector<std::uint8_t> serialize_model(const model::ModelGraph& g) {
    const NameMap names = NameMap::native();
    std::vector<OutTensor> tensors;
    auto add_vector = [&](const std::string& name, const linalg::RealVector& v) {
        if (!v.empty()) tensors.push_back({name, DType::F32, {v.size()}, v});
    };
    auto add_matrix = [&](const std::string& name, const linalg::RealMatrix& m) {
        if (!m.empty()) {
            tensors.push_back({name, DType::F32, {m.rows(), m.cols()},
                               std::vector<double>(m.data().begin(), m.data().end())});
        }
    };
    for (int i = 0; i < static_cast<int>(g.layers.size()); ++i) {
        const auto& l = g.layers[static_cast<std::size_t>(i)];
        add_vector(names.layer_tensor("gamma1", i), l.gamma1);
        add_vector(names.layer_tensor("beta1", i), l.beta1);
        add_vector(names.layer_tensor("gamma2", i), l.gamma2);
        add_vector(names.layer_tensor("beta2", i), l.beta2);
        add_matrix(names.layer_tensor("w_q", i), l.w_q);
        add_matrix(names.layer_tensor("w_k", i), l.w_k);
        add_matrix(names.layer_tensor("w_v", i), l.w_v);
        add_matrix(names.layer_tensor("p", i), l.p);
        add_matrix(names.layer_tensor("e", i), l.e);
        add_matrix(names.layer_tensor("b", i), l.b);
        add_matrix(names.layer_tensor("g", i), l.g);
    }
    if (g.boundary) {
        add_vector(names.globals.at("boundary_gamma"), g.boundary->gamma);
        add_vector(names.globals.at("boundary_beta"), g.boundary->beta);
    }
    return serialize(tensors, {{kConfigMetadataKey, model::config_to_json(g.config).dump()}});
}

} // namespace slanc::safetensors
