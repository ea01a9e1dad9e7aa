#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "slanc/linalg.hpp"
#include "slanc/model.hpp"

namespace slanc::scales {

using linalg::RealMatrix;
using linalg::RealVector;

enum class Formula { StandardMlp, LlamaMlp, Attention, Unit, Dynamic };

std::string to_string(Formula f);
Formula parse_formula(const std::string& s);

// Anything below the binary16 subnormal resolution is rejected.
inline constexpr double kDegenerateThreshold = 0x1.0p-24;

struct NormScale {
    double s = 1.0;
    double reciprocal = 1.0;
    double epsilon_adjusted = 0.0;
    Formula formula = Formula::Unit;
    int layer_index = 0;
    std::string norm_id;

    static NormScale make(std::string norm_id, int layer, Formula formula, double s, double epsilon);
    static NormScale unit(std::string norm_id, int layer, double epsilon);

    friend bool operator==(const NormScale&, const NormScale&) = default;
};

struct ScaleTable {
    std::string fingerprint;
    std::vector<NormScale> entries; // graph order

    const NormScale* find(const std::string& norm_id) const;

    nlohmann::json to_json() const;
    static ScaleTable from_json(const nlohmann::json& j);

    friend bool operator==(const ScaleTable&, const ScaleTable&) = default;
};

// ||diag(gamma) (E G + I)||_F
double scale_standard_mlp(const RealVector& gamma, const RealMatrix& e, const RealMatrix& g);

// ||diag(gamma) (||diag(gamma) E|| B G + I)||_F, spectral norm by power iteration.
double scale_llama_mlp(const RealVector& gamma, const RealMatrix& e, const RealMatrix& b, const RealMatrix& g,
                       const linalg::PowerIterationOptions& opts = {});

// ||diag(gamma) (W_V P + I)||_F with W_V the concatenated per-head value projections.
double scale_attention(const RealVector& gamma, const RealMatrix& w_v, const RealMatrix& p);

double adjust_epsilon(double epsilon, double s);

// One entry per norm. The first norm in execution order sees raw embeddings
// and gets Unit; every other norm gets the formula of the block feeding it,
// using gamma of the norm that feeds that block.
ScaleTable compute_scale_table(const model::ModelGraph& g, const linalg::PowerIterationOptions& opts = {});

} // namespace slanc::scales
