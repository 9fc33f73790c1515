#include "fundus/checkpoint.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <sstream>

#include "fundus/error.hpp"

namespace fundus {

std::string to_string(ModelKind kind) { return kind == ModelKind::FagNet ? "fagnet" : "fgcnet"; }

namespace {

ModelKind parse_kind(const std::string& s) {
    if (s == "fagnet") return ModelKind::FagNet;
    if (s == "fgcnet") return ModelKind::FgcNet;
    fail(ErrorKind::Format, "unknown model kind '" + s + "' in checkpoint");
}

std::string read_string(torch::serialize::InputArchive& archive, const std::string& key) {
    c10::IValue value;
    if (!archive.try_read(key, value) || !value.isString()) {
        fail(ErrorKind::Format, "checkpoint lacks '" + key + "'");
    }
    return value.toStringRef();
}

void open_archive(torch::serialize::InputArchive& archive, const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "checkpoint not found: " + path.string());
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        fail(ErrorKind::Format, "cannot read checkpoint " + path.string());
    }
}

}  // namespace

ShapeInventory shape_inventory(const torch::nn::Module& module) {
    ShapeInventory inv;
    for (const auto& p : module.named_parameters()) {
        inv.emplace_back("param:" + p.key(), p.value().sizes().vec());
    }
    for (const auto& b : module.named_buffers()) {
        inv.emplace_back("buffer:" + b.key(), b.value().sizes().vec());
    }
    return inv;
}

std::string format_inventory(const ShapeInventory& inventory) {
    std::ostringstream out;
    for (const auto& [name, shape] : inventory) {
        out << name << " [";
        for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
        out << "]\n";
    }
    return out.str();
}

void save_checkpoint(const std::filesystem::path& path, ModelKind kind, const Config& model_config,
                     const torch::nn::Module& module) {
    torch::serialize::OutputArchive archive;
    archive.write("kind", c10::IValue(to_string(kind)));
    archive.write("config", c10::IValue(model_config.to_text()));
    archive.write("inventory", c10::IValue(format_inventory(shape_inventory(module))));
    torch::serialize::OutputArchive tensors;
    module.save(tensors);
    archive.write("model", tensors);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    try {
        archive.save_to(path.string());
    } catch (const c10::Error& e) {
        fail(ErrorKind::Io, "cannot write checkpoint " + path.string());
    }
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
    torch::serialize::InputArchive archive;
    open_archive(archive, path);
    CheckpointHeader h;
    h.kind = parse_kind(read_string(archive, "kind"));
    h.config = Config::parse(read_string(archive, "config"));
    h.inventory = read_string(archive, "inventory");
    return h;
}

void load_checkpoint_into(const std::filesystem::path& path, ModelKind expected, torch::nn::Module& module) {
    torch::serialize::InputArchive archive;
    open_archive(archive, path);
    const auto kind = parse_kind(read_string(archive, "kind"));
    if (kind != expected) {
        fail(ErrorKind::Compatibility, "checkpoint holds a " + to_string(kind) + " model, expected " + to_string(expected));
    }
    if (read_string(archive, "inventory") != format_inventory(shape_inventory(module))) {
        fail(ErrorKind::Compatibility, "checkpoint parameter inventory does not match the configured model");
    }
    torch::serialize::InputArchive tensors;
    if (!archive.try_read("model", tensors)) fail(ErrorKind::Format, "checkpoint lacks model tensors");
    torch::NoGradGuard no_grad;
    module.load(tensors);
}

std::string file_sha256(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

}  // namespace fundus
