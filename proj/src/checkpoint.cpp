#include "sdsep/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "sdsep/errors.hpp"
#include "sdsep/io.hpp"

namespace sdsep {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host order and must be little-endian");

namespace {
constexpr char kMagic[8] = {'S', 'D', 'C', 'K', 'P', 'T', '1', '\0'};
}

void Checkpoint::put_raw(const std::string& name, const Shape& shape, const std::string& dtype,
                         const void* data, std::size_t bytes) {
    if (!entries_.count(name)) order_.push_back(name);
    Entry e{shape, dtype, std::vector<std::uint8_t>(bytes)};
    if (bytes) std::memcpy(e.bytes.data(), data, bytes);
    entries_[name] = std::move(e);
}

std::vector<std::string> Checkpoint::names() const { return order_; }

const Shape& Checkpoint::shape(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("checkpoint has no tensor '" + name + "'");
    return it->second.shape;
}

const Checkpoint::Entry& Checkpoint::entry(const std::string& name,
                                           const std::string& dtype) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("checkpoint has no tensor '" + name + "'");
    if (it->second.dtype != dtype) {
        throw ContractError("checkpoint tensor '" + name + "' has dtype " + it->second.dtype +
                            ", wanted " + dtype);
    }
    return it->second;
}

template <typename T>
std::vector<T> Checkpoint::values(const std::string& name) const {
    const auto& e = entry(name, dtype_of<T>());
    std::vector<T> out(e.bytes.size() / sizeof(T));
    if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
    return out;
}

template <typename T>
void Checkpoint::load_into(const std::string& name, Tensor<T>& dst) const {
    const auto& e = entry(name, dtype_of<T>());
    if (e.shape != dst.shape()) {
        throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_string(e.shape) +
                         ", expected " + shape_string(dst.shape()));
    }
    std::memcpy(dst.mutable_data().data(), e.bytes.data(), e.bytes.size());
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
    nlohmann::json manifest;
    manifest["format"] = "SDCKPT1";
    manifest["meta"] = meta_;
    auto& tensors = manifest["tensors"] = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& name : order_) {
        const auto& e = entries_.at(name);
        tensors.push_back({{"name", name},
                           {"shape", e.shape},
                           {"dtype", e.dtype},
                           {"offset", offset},
                           {"bytes", e.bytes.size()}});
        offset += e.bytes.size();
    }
    const std::string text = manifest.dump();
    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    std::uint64_t len = text.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
    out.insert(out.end(), text.begin(), text.end());
    out.reserve(out.size() + offset);
    for (const auto& name : order_) {
        const auto& b = entries_.at(name).bytes;
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 16) throw ParseError("checkpoint shorter than header", bytes.size());
    if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw ParseError("bad checkpoint magic", 0);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= std::uint64_t(bytes[8 + i]) << (8 * i);
    if (len > bytes.size() - 16) throw ParseError("manifest length past end of file", 8);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + len);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad checkpoint manifest: ") + e.what(), 16);
    }
    Checkpoint ck;
    ck.meta_ = manifest.value("meta", nlohmann::json::object());
    const std::size_t base = 16 + len;
    for (const auto& t : manifest.at("tensors")) {
        const std::size_t off = t.at("offset"), n = t.at("bytes");
        if (base + off + n > bytes.size()) {
            throw ParseError("tensor '" + t.at("name").get<std::string>() + "' truncated",
                             bytes.size());
        }
        Entry e{t.at("shape").get<Shape>(), t.at("dtype"),
                std::vector<std::uint8_t>(bytes.begin() + base + off,
                                          bytes.begin() + base + off + n)};
        const std::string name = t.at("name");
        ck.order_.push_back(name);
        ck.entries_[name] = std::move(e);
    }
    return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    io::write_file_atomic(path, serialize());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("checkpoint not found", path.string());
    return deserialize(io::read_file(path));
}

template std::vector<float> Checkpoint::values<float>(const std::string&) const;
template std::vector<double> Checkpoint::values<double>(const std::string&) const;
template std::vector<std::uint8_t> Checkpoint::values<std::uint8_t>(const std::string&) const;
template std::vector<std::int64_t> Checkpoint::values<std::int64_t>(const std::string&) const;
template void Checkpoint::load_into<float>(const std::string&, Tensor<float>&) const;
template void Checkpoint::load_into<double>(const std::string&, Tensor<double>&) const;

}  // namespace sdsep
