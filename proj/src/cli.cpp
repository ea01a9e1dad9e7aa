#include "slanc/cli.hpp"

#include <algorithm>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "slanc/engine.hpp"
#include "slanc/json_io.hpp"
#include "slanc/model.hpp"
#include "slanc/report.hpp"
#include "slanc/safetensors.hpp"
#include "slanc/scales.hpp"

namespace slanc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

// "e,g:8" or "e,g:8@0,2"
model::Amplification parse_amplify(const std::string& spec) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw UsageError("--amplify expects MATRICES:FACTOR[@LAYERS], got '" + spec + "'");
    model::Amplification a;
    a.matrices = split(spec.substr(0, colon), ',');
    std::string rest = spec.substr(colon + 1);
    const auto at = rest.find('@');
    try {
        a.factor = std::stod(rest.substr(0, at));
        if (at != std::string::npos) {
            a.layers.clear();
            for (const auto& l : split(rest.substr(at + 1), ',')) a.layers.push_back(std::stoi(l));
        }
    } catch (const std::logic_error&) {
        throw UsageError("--amplify: cannot parse '" + spec + "'");
    }
    if (a.matrices.empty() || a.layers.empty()) throw UsageError("--amplify: cannot parse '" + spec + "'");
    return a;
}

struct ModelSource {
    std::string path;
    std::string name_map;
    std::string config;

    void add_options(CLI::App* cmd) {
        cmd->add_option("model", path, "Model safetensors file")->required()->check(CLI::ExistingFile);
        cmd->add_option("--name-map", name_map, "Name map JSON (default: native names when the file carries a config, "
                                                "Llama names otherwise)")
            ->check(CLI::ExistingFile);
        cmd->add_option("--config", config, "Model config JSON overriding the file")->check(CLI::ExistingFile);
    }

    model::ModelGraph load() const {
        const auto file = safetensors::File::read(path);
        std::optional<model::ModelConfig> cfg;
        if (!config.empty()) cfg = model::config_from_json(json::parse(json_io::read_file(config)));
        safetensors::NameMap names;
        if (!name_map.empty())
            names = safetensors::NameMap::load(name_map);
        else if (file.metadata().count(safetensors::kConfigMetadataKey))
            names = safetensors::NameMap::native();
        else
            names = safetensors::NameMap::llama();
        auto g = safetensors::load_model(file, names, cfg);
        const auto issues = model::validate(g);
        if (!issues.empty()) {
            std::string msg = "model failed validation:";
            for (const auto& i : issues) msg += "\n  " + i.location + ": " + i.message;
            throw UsageError(msg);
        }
        return g;
    }
};

struct InputSource {
    std::size_t tokens = 512;
    std::uint64_t seed = 0;
    std::string input;

    void add_options(CLI::App* cmd) {
        cmd->add_option("--tokens", tokens, "Number of Gaussian input tokens")->capture_default_str();
        cmd->add_option("--seed", seed, "Seed for the Gaussian input tokens")->capture_default_str();
        cmd->add_option("--input", input, "Safetensors file holding an [n, d] tensor named 'activations'")
            ->check(CLI::ExistingFile);
    }

    linalg::RealMatrix make(const model::ModelGraph& g) const {
        const auto d = static_cast<std::size_t>(g.config.d_model);
        if (!input.empty()) {
            const auto file = safetensors::File::read(input);
            const auto& e = file.entry("activations");
            if (e.shape.size() != 2 || e.shape[1] != d || e.shape[0] == 0)
                throw UsageError("--input: 'activations' must have shape [n, " + std::to_string(d) + "] with n > 0");
            return linalg::RealMatrix(e.shape[0], d, file.values("activations"));
        }
        if (tokens == 0) throw UsageError("--tokens must be positive");
        return report::gaussian_tokens(tokens, d, seed);
    }
};

void emit(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-")
        out << text;
    else
        json_io::write_file_atomic(path, text);
}

scales::ScaleTable read_table(const std::string& path) {
    return scales::ScaleTable::from_json(json::parse(json_io::read_file(path)));
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Static LayerNorm scaling toolkit with binary16 emulation", "slanc"};
    app.require_subcommand(1);

    // gen-model
    auto* gen = app.add_subcommand("gen-model", "Write a seeded synthetic model");
    model::ModelConfig cfg;
    cfg.mlp_hidden = 0;
    cfg.n_heads = 0;
    std::string norm = "rmsnorm", placement = "post", mlp = "llama", act = "silu", gen_out;
    std::uint64_t gen_seed = 0;
    std::optional<double> gen_std;
    double gamma_jitter = 0.0, beta_std = 0.0;
    bool no_boundary = false;
    std::vector<std::string> amplify;
    gen->add_option("--d", cfg.d_model, "Hidden size")->capture_default_str();
    gen->add_option("--layers", cfg.n_layers, "Decoder count")->capture_default_str();
    gen->add_option("--heads", cfg.n_heads, "Attention heads (default: d/16, at least 1)");
    gen->add_option("--mlp-hidden", cfg.mlp_hidden, "MLP hidden size (default: 4d)");
    gen->add_option("--norm", norm, "rmsnorm | layernorm")
        ->check(CLI::IsMember({"rmsnorm", "layernorm"}))
        ->capture_default_str();
    gen->add_option("--placement", placement, "post | pre")->check(CLI::IsMember({"post", "pre"}))->capture_default_str();
    gen->add_option("--mlp", mlp, "standard | llama")->check(CLI::IsMember({"standard", "llama"}))->capture_default_str();
    gen->add_option("--act", act, "relu | gelu | silu")->check(CLI::IsMember({"relu", "gelu", "silu"}))->capture_default_str();
    gen->add_option("--eps", cfg.epsilon, "Norm epsilon")->capture_default_str();
    gen->add_option("--seed", gen_seed, "Weight seed")->capture_default_str();
    gen->add_option("--std", gen_std, "Weight std for every matrix (default: 1/sqrt(fan_in))");
    gen->add_option("--gamma-jitter", gamma_jitter, "Std of gamma around 1")->capture_default_str();
    gen->add_option("--beta-std", beta_std, "Std of beta (LayerNorm only)")->capture_default_str();
    gen->add_flag("--no-boundary-norm", no_boundary, "Omit the embedding/final norm");
    gen->add_option("--amplify", amplify, "MATRICES:FACTOR[@LAYERS], e.g. e,g:8@0 (repeatable)");
    gen->add_option("-o,--output", gen_out, "Output safetensors path")->required();

    // scales
    auto* sc = app.add_subcommand("scales", "Compute the static scale table of a model");
    ModelSource sc_model;
    sc_model.add_options(sc);
    std::string sc_out;
    sc->add_option("-o,--output", sc_out, "Output JSON (default: stdout)");

    // audit
    auto* au = app.add_subcommand("audit", "Histogram the sum of squares at every norm");
    ModelSource au_model;
    InputSource au_input;
    au_model.add_options(au);
    au_input.add_options(au);
    std::string au_policy = "fp16", au_scales, au_format = "json", au_out;
    bool fail_on_overflow = false;
    au->add_option("--policy", au_policy, "fp16 | fp64")->check(CLI::IsMember({"fp16", "fp64"}))->capture_default_str();
    au->add_option("--scales", au_scales, "Scale table JSON")->check(CLI::ExistingFile);
    au->add_option("--format", au_format, "json | csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
    au->add_option("-o,--output", au_out, "Output path (default: stdout)");
    au->add_flag("--fail-on-overflow", fail_on_overflow, "Exit with 4 when any accumulator overflows");

    // compare
    auto* cmp = app.add_subcommand("compare", "Compare FP64, FP16 and scaled FP16 final states");
    ModelSource cmp_model;
    InputSource cmp_input;
    cmp_model.add_options(cmp);
    cmp_input.add_options(cmp);
    std::string cmp_scales, cmp_out;
    cmp->add_option("--scales", cmp_scales, "Scale table JSON (default: computed from the model)")
        ->check(CLI::ExistingFile);
    cmp->add_option("-o,--output", cmp_out, "Write the JSON report here");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
            return kOk;
        }
        err << "error: " << e.what() << "\n";
        return kUsage;
    }

    try {
        if (gen->parsed()) {
            if (cfg.n_heads == 0) cfg.n_heads = std::max(1, cfg.d_model / 16);
            if (cfg.d_model > 0 && cfg.n_heads > 0) cfg.head_dim = cfg.d_model / cfg.n_heads;
            if (cfg.mlp_hidden == 0) cfg.mlp_hidden = 4 * cfg.d_model;
            cfg.norm_kind = norm == "layernorm" ? model::NormKind::LayerNorm : model::NormKind::RMSNorm;
            cfg.residual_placement = placement == "pre" ? model::ResidualPlacement::PreLN : model::ResidualPlacement::PostLN;
            cfg.mlp_kind = mlp == "standard" ? model::MlpKind::Standard : model::MlpKind::LlamaGated;
            cfg.nonlinearity = act == "relu"   ? model::Nonlinearity::ReLU
                               : act == "gelu" ? model::Nonlinearity::GeLU
                                               : model::Nonlinearity::SiLU;
            cfg.boundary_norm = !no_boundary;
            const auto problems = model::check_config(cfg);
            if (!problems.empty()) throw UsageError("invalid model flags: " + problems.front());

            model::InitSpec init;
            if (gen_std) init = model::InitSpec::uniform(*gen_std);
            init.gamma_jitter = gamma_jitter;
            init.beta_std = cfg.norm_kind == model::NormKind::LayerNorm ? beta_std : 0.0;
            for (const auto& a : amplify) init.amplifications.push_back(parse_amplify(a));
            model::ModelGraph g;
            try {
                g = model::generate_synthetic(cfg, init, gen_seed);
            } catch (const Error& e) {
                throw UsageError(e.what());
            }
            const fs::path path = gen_out;
            const auto bytes = safetensors::serialize_model(g);
            json_io::write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
            json_io::write_file_atomic(path.parent_path() / (path.stem().string() + ".config.json"),
                                       json_io::dump(model::config_to_json(cfg)) + "\n");
            out << model::fingerprint(g) << "\n";
        } else if (sc->parsed()) {
            const auto g = sc_model.load();
            emit(sc_out, json_io::dump(scales::compute_scale_table(g).to_json()) + "\n", out);
        } else if (au->parsed()) {
            const auto g = au_model.load();
            const auto x = au_input.make(g);
            std::optional<scales::ScaleTable> table;
            if (!au_scales.empty()) table = read_table(au_scales);
            const auto policy =
                au_policy == "fp64" ? engine::PrecisionPolicy::reference() : engine::PrecisionPolicy::fp16();
            const auto r = engine::forward(g, x, policy, table ? &*table : nullptr);
            const auto rep = report::make_audit(g, r, au_policy, table.has_value());
            emit(au_out, au_format == "csv" ? rep.to_csv() : json_io::dump(rep.to_json()) + "\n", out);
            if (fail_on_overflow && rep.overflow_total() > 0) {
                err << "overflow in " << rep.overflow_total() << " accumulations\n";
                return kOverflowFound;
            }
        } else if (cmp->parsed()) {
            const auto g = cmp_model.load();
            const auto x = cmp_input.make(g);
            const auto table = cmp_scales.empty() ? scales::compute_scale_table(g) : read_table(cmp_scales);
            const auto rep = report::run_compare(g, x, table);
            if (!cmp_out.empty()) json_io::write_file_atomic(cmp_out, json_io::dump(rep.to_json()) + "\n");
            out << rep.to_text();
        }
    } catch (const DegenerateScaleError& e) {
        err << "degenerate scale at norm " << e.norm_id() << ": " << e.what() << "\n";
        return kDegenerateScale;
    } catch (const engine::NonPositiveVarianceError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const NonFiniteError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const NonConvergenceError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kOk;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

} // namespace slanc::cli
