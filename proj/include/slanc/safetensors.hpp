#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "slanc/errors.hpp"
#include "slanc/model.hpp"

namespace slanc::safetensors {

enum class DType { F32, F16, BF16 };

std::string to_string(DType t);
std::size_t element_size(DType t);

class SafetensorsError : public Error {
public:
    enum class Kind { MalformedHeader, Truncated, UnknownDtype, MissingTensor, ShapeMismatch, Io };

    SafetensorsError(Kind kind, std::string tensor, const std::string& what)
        : Error(what), kind_(kind), tensor_(std::move(tensor)) {}

    Kind kind() const noexcept { return kind_; }
    const std::string& tensor() const noexcept { return tensor_; }

private:
    Kind kind_;
    std::string tensor_;
};

struct TensorEntry {
    std::string dtype; // as written in the header
    std::vector<std::size_t> shape;
    std::size_t begin = 0;
    std::size_t end = 0;
};

// Parsed view of a safetensors buffer: 8-byte little-endian header length,
// JSON header, then the raw data section.
class File {
public:
    static File parse(std::vector<std::uint8_t> bytes);
    static File read(const std::filesystem::path& path);

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const TensorEntry& entry(const std::string& name) const;
    const std::map<std::string, TensorEntry>& entries() const { return entries_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }

    // Tensor values decoded to double, row-major.
    std::vector<double> values(const std::string& name) const;

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t data_start_ = 0;
    std::map<std::string, TensorEntry> entries_;
    std::map<std::string, std::string> metadata_;
};

struct OutTensor {
    std::string name;
    DType dtype = DType::F32;
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

// Tensors are laid out in name order; the header is padded with spaces to a
// multiple of 8 bytes.
std::vector<std::uint8_t> serialize(const std::vector<OutTensor>& tensors,
                                    const std::map<std::string, std::string>& metadata = {});
void write(const std::filesystem::path& path, const std::vector<OutTensor>& tensors,
           const std::map<std::string, std::string>& metadata = {});

// Maps canonical roles to tensor names. Role names without "{i}" are
// appended to layer_template.
struct NameMap {
    std::string layer_template;
    std::map<std::string, std::string> roles;
    std::set<std::string> transpose;
    std::map<std::string, std::string> globals; // boundary_gamma, boundary_beta

    std::string layer_tensor(const std::string& role, int layer) const;

    static NameMap from_json(const nlohmann::json& j);
    static NameMap load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    // Hugging Face Llama naming; projections stored as [out, in].
    static NameMap llama();
    // Naming used by write_model.
    static NameMap native();
};

inline constexpr const char* kConfigMetadataKey = "slanc_config";

// Loads a graph. The config comes from `config` when given, else from the
// slanc_config metadata entry, else it is inferred from tensor shapes.
model::ModelGraph load_model(const File& file, const NameMap& names,
                             const std::optional<model::ModelConfig>& config = std::nullopt);
model::ModelGraph load_model(const std::filesystem::path& path, const NameMap& names,
                             const std::optional<model::ModelConfig>& config = std::nullopt);

// Native-named F32 file with the config in the metadata.
std::vector<std::uint8_t> serialize_model(const model::ModelGraph& g);

} // namespace slanc::safetensors
