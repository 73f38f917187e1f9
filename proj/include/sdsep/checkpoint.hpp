#pragma once

// Tensor container file:
//   "SDCKPT1\0" | u64 LE manifest length | UTF-8 JSON manifest | payloads
// The manifest lists each tensor's name, shape, dtype, byte offset (relative
// to the payload start) and byte size, plus free-form metadata.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdsep/tensor.hpp"

namespace sdsep {

class Checkpoint {
  public:
    nlohmann::json& meta() { return meta_; }
    const nlohmann::json& meta() const { return meta_; }

    template <typename T>
    void put(const std::string& name, const Tensor<T>& t) {
        put_raw(name, t.shape(), dtype_of<T>(), t.data().data(), t.numel() * sizeof(T));
    }
    template <typename T>
    void put(const std::string& name, const Shape& shape, const std::vector<T>& values) {
        put_raw(name, shape, dtype_of<T>(), values.data(), values.size() * sizeof(T));
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    std::vector<std::string> names() const;
    const Shape& shape(const std::string& name) const;

    template <typename T>
    std::vector<T> values(const std::string& name) const;
    // Copies into an existing leaf; shape and dtype must match.
    template <typename T>
    void load_into(const std::string& name, Tensor<T>& dst) const;

    std::vector<std::uint8_t> serialize() const;
    static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

    void save(const std::filesystem::path& path) const;
    // Throws IoError naming the path when the file is missing or unreadable.
    static Checkpoint load(const std::filesystem::path& path);

  private:
    struct Entry {
        Shape shape;
        std::string dtype;
        std::vector<std::uint8_t> bytes;
    };

    template <typename T>
    static std::string dtype_of() {
        if constexpr (std::is_same_v<T, float>) return "f32";
        else if constexpr (std::is_same_v<T, double>) return "f64";
        else if constexpr (std::is_same_v<T, std::uint8_t>) return "u8";
        else {
            static_assert(std::is_same_v<T, std::int64_t>, "unsupported checkpoint dtype");
            return "i64";
        }
    }
    void put_raw(const std::string& name, const Shape& shape, const std::string& dtype,
                 const void* data, std::size_t bytes);
    const Entry& entry(const std::string& name, const std::string& dtype) const;

    nlohmann::json meta_ = nlohmann::json::object();
    std::vector<std::string> order_;
    std::map<std::string, Entry> entries_;
};

}  // namespace sdsep
