#include "pixeltext/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace pixeltext {

namespace {

void put_u32(std::ostream& out, uint32_t v) {
    uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
    uint8_t b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("truncated checkpoint: " + path);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

std::string serialize_config(const ModelConfig& cfg) {
    std::ostringstream out;
    out << "hidden_size=" << cfg.hidden_size << "\n";
    out << "n_layers=" << cfg.n_layers << "\n";
    out << "n_heads=" << cfg.n_heads << "\n";
    out << "n_kv_heads=" << cfg.n_kv_heads << "\n";
    out << "intermediate_size=" << cfg.intermediate_size << "\n";
    out << "vocab_size=" << cfg.vocab_size << "\n";
    out << "max_positions=" << cfg.max_positions << "\n";
    out << "rope_theta=" << cfg.rope_theta << "\n";
    out << "rms_eps=" << cfg.rms_eps << "\n";
    out << "patch_dim=" << cfg.patch_dim << "\n";
    return out.str();
}

ModelConfig parse_config(const std::string& text, const std::string& path) {
    ModelConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw Error("bad checkpoint config line '" + line + "': " + path);
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "hidden_size") cfg.hidden_size = std::stoi(value);
        else if (key == "n_layers") cfg.n_layers = std::stoi(value);
        else if (key == "n_heads") cfg.n_heads = std::stoi(value);
        else if (key == "n_kv_heads") cfg.n_kv_heads = std::stoi(value);
        else if (key == "intermediate_size") cfg.intermediate_size = std::stoi(value);
        else if (key == "vocab_size") cfg.vocab_size = std::stoi(value);
        else if (key == "max_positions") cfg.max_positions = std::stoi(value);
        else if (key == "rope_theta") cfg.rope_theta = std::stod(value);
        else if (key == "rms_eps") cfg.rms_eps = std::stod(value);
        else if (key == "patch_dim") cfg.patch_dim = std::stoi(value);
        else throw Error("unknown checkpoint config key '" + key + "': " + path);
    }
    return cfg;
}

} // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const std::vector<std::pair<std::string, const Matrix<float>*>>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    out.write("PXCKPT01", 8);
    std::string config = serialize_config(cfg);
    put_u32(out, uint32_t(config.size()));
    out.write(config.data(), std::streamsize(config.size()));
    put_u32(out, uint32_t(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        put_u32(out, uint32_t(name.size()));
        out.write(name.data(), std::streamsize(name.size()));
        put_u32(out, 2);
        put_u32(out, uint32_t(tensor->rows));
        put_u32(out, uint32_t(tensor->cols));
        static_assert(sizeof(float) == 4);
        out.write(reinterpret_cast<const char*>(tensor->data.data()),
                  std::streamsize(tensor->data.size() * sizeof(float)));
    }
    if (!out) throw Error("short write: " + path);
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, Parameters<float>& params) {
    std::vector<std::pair<std::string, const Matrix<float>*>> tensors;
    for (auto& [name, tensor] : named_tensors(params)) tensors.emplace_back(name, tensor);
    save_checkpoint(path, cfg, tensors);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open for reading: " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, "PXCKPT01", 8) != 0) {
        throw Error("bad checkpoint magic: " + path);
    }
    uint32_t config_len = get_u32(in, path);
    std::string config_text(config_len, '\0');
    if (!in.read(config_text.data(), config_len)) throw Error("truncated checkpoint: " + path);

    Checkpoint ckpt;
    ckpt.config = parse_config(config_text, path);
    uint32_t n_tensors = get_u32(in, path);
    for (uint32_t t = 0; t < n_tensors; ++t) {
        uint32_t name_len = get_u32(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw Error("truncated checkpoint: " + path);
        uint32_t rank = get_u32(in, path);
        if (rank != 2) throw Error("unsupported tensor rank " + std::to_string(rank) + ": " + path);
        uint32_t rows = get_u32(in, path);
        uint32_t cols = get_u32(in, path);
        Matrix<float> m(static_cast<int>(rows), static_cast<int>(cols));
        if (!m.data.empty() &&
            !in.read(reinterpret_cast<char*>(m.data.data()), std::streamsize(m.data.size() * sizeof(float)))) {
            throw Error("truncated checkpoint: " + path);
        }
        ckpt.tensors.emplace(std::move(name), std::move(m));
    }
    return ckpt;
}

Parameters<float> params_from_checkpoint(const Checkpoint& ckpt) {
    Parameters<float> params = make_parameters<float>(ckpt.config);
    for (auto& [name, tensor] : named_tensors(params)) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw ConfigMismatch("checkpoint is missing tensor " + name);
        if (it->second.rows != tensor->rows || it->second.cols != tensor->cols) {
            throw ConfigMismatch("checkpoint tensor " + name + " has shape " + std::to_string(it->second.rows) +
                                 "x" + std::to_string(it->second.cols) + ", expected " +
                                 std::to_string(tensor->rows) + "x" + std::to_string(tensor->cols));
        }
        *tensor = it->second;
    }
    return params;
}

} // namespace pixeltext
