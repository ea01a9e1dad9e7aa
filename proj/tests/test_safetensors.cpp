#include "doctest.h"

#include <bit>
#include <cstring>

#include "slanc/model.hpp"
#include "slanc/safetensors.hpp"

using namespace slanc;
using namespace slanc::safetensors;
using Kind = SafetensorsError::Kind;

namespace {

// Hand-assembled file: length prefix, header text, raw bytes.
std::vector<std::uint8_t> build(const std::string& header, const std::vector<std::uint8_t>& data,
                                std::uint64_t declared_len = UINT64_MAX) {
    std::vector<std::uint8_t> out;
    const std::uint64_t n = declared_len == UINT64_MAX ? header.size() : declared_len;
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(n >> (8 * k)));
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), data.begin(), data.end());
    return out;
}

std::vector<std::uint8_t> f32_bytes(std::initializer_list<float> values) {
    std::vector<std::uint8_t> out;
    for (float f : values) {
        const auto u = std::bit_cast<std::uint32_t>(f);
        for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(u >> (8 * k)));
    }
    return out;
}

Kind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const SafetensorsError& e) {
        return e.kind();
    }
    FAIL("expected SafetensorsError");
    return Kind::Io;
}

model::ModelConfig cfg(model::NormKind norm, model::MlpKind mlp, model::ResidualPlacement placement, bool boundary) {
    model::ModelConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.head_dim = 4;
    c.mlp_hidden = 12;
    c.n_layers = 2;
    c.norm_kind = norm;
    c.mlp_kind = mlp;
    c.residual_placement = placement;
    c.boundary_norm = boundary;
    return c;
}

} // namespace

TEST_CASE("minimal F32 file decodes exactly") {
    const auto file = File::parse(build(R"({"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}})",
                                        f32_bytes({1.5f, -2.25f, 3.0e-7f, 65504.0f})));
    CHECK(file.entry("w").shape == std::vector<std::size_t>{2, 2});
    CHECK(file.values("w") == std::vector<double>{1.5, -2.25, static_cast<double>(3.0e-7f), 65504.0});
}

TEST_CASE("half and bfloat16 decode") {
    const auto file = File::parse(build(
        R"({"h":{"dtype":"F16","shape":[2],"data_offsets":[0,4]},"b":{"dtype":"BF16","shape":[2],"data_offsets":[4,8]},"__metadata__":{"k":"v"}})",
        {0x00, 0x3C, 0x00, 0x40, 0x80, 0x3F, 0x40, 0xC0}));
    CHECK(file.values("h") == std::vector<double>{1.0, 2.0});
    CHECK(file.values("b") == std::vector<double>{1.0, -3.0});
    CHECK(file.metadata().at("k") == "v");
}

TEST_CASE("malformed inputs") {
    CHECK(kind_of([] { File::parse({1, 2, 3}); }) == Kind::Truncated);
    CHECK(kind_of([] { File::parse(build("{}", {}, 4096)); }) == Kind::Truncated);
    CHECK(kind_of([] { File::parse(build("{not json", {})); }) == Kind::MalformedHeader);
    CHECK(kind_of([] { File::parse(build(R"({"w":{"dtype":"F32"}})", {})); }) == Kind::MalformedHeader);
    CHECK(kind_of([] {
              File::parse(build(R"({"w":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}})", f32_bytes({1, 2})));
          }) == Kind::Truncated);
    const auto file = File::parse(build(
        R"({"q":{"dtype":"I8","shape":[2],"data_offsets":[0,2]},"s":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}})",
        f32_bytes({1, 2})));
    CHECK(kind_of([&] { file.values("q"); }) == Kind::UnknownDtype);
    CHECK(kind_of([&] { file.values("s"); }) == Kind::ShapeMismatch);
    CHECK(kind_of([&] { file.values("missing"); }) == Kind::MissingTensor);
    try {
        file.values("q");
    } catch (const SafetensorsError& e) {
        CHECK(e.tensor() == "q");
    }
}

TEST_CASE("native model round trip") {
    using model::MlpKind;
    using model::NormKind;
    using model::ResidualPlacement;
    std::uint64_t seed = 1;
    for (auto norm : {NormKind::RMSNorm, NormKind::LayerNorm}) {
        for (auto mlp : {MlpKind::Standard, MlpKind::LlamaGated}) {
            for (bool boundary : {false, true}) {
                model::InitSpec init;
                init.gamma_jitter = 0.1;
                init.beta_std = 0.1;
                const auto g = model::generate_synthetic(cfg(norm, mlp, ResidualPlacement::PostLN, boundary), init, seed++);
                const auto file = File::parse(serialize_model(g));
                const auto loaded = load_model(file, NameMap::native());
                CHECK(loaded == g);
                CHECK(model::fingerprint(loaded) == model::fingerprint(g));

                // every file tensor lands in exactly one graph slot
                std::size_t slots = g.boundary ? 1 + (g.boundary->beta.empty() ? 0 : 1) : 0;
                for (const auto& l : g.layers) {
                    for (const auto* v : {&l.gamma1, &l.beta1, &l.gamma2, &l.beta2}) slots += v->empty() ? 0 : 1;
                    for (const auto* m : {&l.w_q, &l.w_k, &l.w_v, &l.p, &l.e, &l.b, &l.g}) slots += m->empty() ? 0 : 1;
                }
                CHECK(file.entries().size() == slots);
            }
        }
    }
}

TEST_CASE("llama naming with transposed projections and inferred config") {
    const auto g = model::generate_synthetic(
        cfg(model::NormKind::RMSNorm, model::MlpKind::LlamaGated, model::ResidualPlacement::PreLN, true), {}, 9);
    const NameMap names = NameMap::llama();
    std::vector<OutTensor> tensors;
    auto put_matrix = [&](const std::string& role, int i, const linalg::RealMatrix& m) {
        const auto t = m.transpose(); // stored [out, in]
        tensors.push_back({names.layer_tensor(role, i), DType::F32, {t.rows(), t.cols()},
                           std::vector<double>(t.data().begin(), t.data().end())});
    };
    for (int i = 0; i < 2; ++i) {
        const auto& l = g.layers[static_cast<std::size_t>(i)];
        tensors.push_back({names.layer_tensor("gamma1", i), DType::F32, {8}, l.gamma1});
        tensors.push_back({names.layer_tensor("gamma2", i), DType::F32, {8}, l.gamma2});
        put_matrix("w_q", i, l.w_q);
        put_matrix("w_k", i, l.w_k);
        put_matrix("w_v", i, l.w_v);
        put_matrix("p", i, l.p);
        put_matrix("e", i, l.e);
        put_matrix("b", i, l.b);
        put_matrix("g", i, l.g);
    }
    tensors.push_back({"model.norm.weight", DType::F32, {8}, g.boundary->gamma});
    tensors.push_back({"model.embed_tokens.weight", DType::F32, {3, 8}, std::vector<double>(24, 0.5)});

    const auto file = File::parse(serialize(tensors));
    const auto loaded = load_model(file, names);
    CHECK(loaded.config.d_model == 8);
    CHECK(loaded.config.mlp_hidden == 12);
    CHECK(loaded.config.n_layers == 2);
    CHECK(loaded.config.mlp_kind == model::MlpKind::LlamaGated);
    CHECK(loaded.config.norm_kind == model::NormKind::RMSNorm);
    CHECK(loaded.config.boundary_norm);
    CHECK(loaded.layers == g.layers);
    CHECK(loaded.boundary == g.boundary);

    // with the real config supplied the graphs agree fully
    CHECK(load_model(file, names, g.config) == g);

    // shape mismatch names the tensor
    auto bad = tensors;
    bad[2].shape = {12, 8};
    bad[2].values.resize(96);
    try {
        load_model(File::parse(serialize(bad)), names, g.config);
        FAIL("expected shape mismatch");
    } catch (const SafetensorsError& e) {
        CHECK(e.kind() == Kind::ShapeMismatch);
        CHECK(e.tensor() == bad[2].name);
    }

    // missing required tensor
    auto missing = tensors;
    missing.erase(missing.begin() + 3);
    try {
        load_model(File::parse(serialize(missing)), names, g.config);
        FAIL("expected missing tensor");
    } catch (const SafetensorsError& e) {
        CHECK(e.kind() == Kind::MissingTensor);
        CHECK(e.tensor() == tensors[3].name);
    }
}

TEST_CASE("name map json") {
    const auto j = nlohmann::json::parse(R"({
        "layer_template": "blk.{i}.",
        "roles": {"gamma1": "attn_norm", "w_v": "h.{i}.v"},
        "transpose": ["w_v"],
        "globals": {"boundary_gamma": "out_norm"}
    })");
    const auto m = NameMap::from_json(j);
    CHECK(m.layer_tensor("gamma1", 3) == "blk.3.attn_norm");
    CHECK(m.layer_tensor("w_v", 12) == "h.12.v");
    CHECK(m.transpose.count("w_v") == 1);
    CHECK(NameMap::from_json(m.to_json()).roles == m.roles);
    CHECK_THROWS_AS(m.layer_tensor("g", 0), SafetensorsError);
    CHECK(NameMap::llama().layer_tensor("p", 5) == "model.layers.5.self_attn.o_proj.weight");
}
