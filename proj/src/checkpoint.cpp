#include "cdsynth/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace cdsynth {

namespace {

using nlohmann::json;

Dtype parse_dtype(const std::string& s, const std::string& name) {
    if (s == "F32") return Dtype::f32;
    if (s == "F64") return Dtype::f64;
    fail_data("tensor '" + name + "': unsupported dtype '" + s + "' (only F32/F64)");
}

} // namespace

TensorMap load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_data("cannot open checkpoint '" + path.string() + "'");

    std::uint8_t len_bytes[8];
    if (!in.read(reinterpret_cast<char*>(len_bytes), 8))
        fail_data("checkpoint '" + path.string() + "' is truncated before the header length");
    std::uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i) header_len |= static_cast<std::uint64_t>(len_bytes[i]) << (8 * i);
    if (header_len == 0 || header_len > (1ull << 31))
        fail_data("checkpoint '" + path.string() + "' has an implausible header length");

    std::string header_text(header_len, '\0');
    if (!in.read(header_text.data(), static_cast<std::streamsize>(header_len)))
        fail_data("checkpoint '" + path.string() + "' is truncated inside the header");

    json header = json::parse(header_text, nullptr, false);
    if (header.is_discarded() || !header.is_object())
        fail_data("checkpoint '" + path.string() + "' has a malformed JSON header");

    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::uint64_t data_len = data.size();

    TensorMap out;
    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") continue;
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets"))
            fail_data("tensor '" + name + "': header entry is missing dtype/shape/data_offsets");

        Dtype dtype = parse_dtype(entry["dtype"].get<std::string>(), name);
        std::vector<std::int64_t> shape;
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_integer()) fail_data("tensor '" + name + "': non-integer shape entry");
            shape.push_back(d.get<std::int64_t>());
        }
        const auto& offs = entry["data_offsets"];
        if (!offs.is_array() || offs.size() != 2)
            fail_data("tensor '" + name + "': data_offsets must be a [begin, end] pair");
        std::uint64_t begin = offs[0].get<std::uint64_t>();
        std::uint64_t end = offs[1].get<std::uint64_t>();
        if (begin > end || end > data_len)
            fail_data("tensor '" + name + "': data_offsets outside the data section");

        std::int64_t n = 1;
        for (std::int64_t d : shape) n *= d;
        std::uint64_t expected = static_cast<std::uint64_t>(n) * itemsize(dtype);
        if (end - begin != expected)
            fail_data("tensor '" + name + "': payload of " + std::to_string(end - begin) +
                      " bytes does not match shape");

        Tensor t;
        t.dtype = dtype;
        t.shape = std::move(shape);
        if (dtype == Dtype::f32) {
            std::vector<float> v(static_cast<std::size_t>(n));
            std::memcpy(v.data(), data.data() + begin, expected);
            t.data = std::move(v);
        } else {
            std::vector<double> v(static_cast<std::size_t>(n));
            std::memcpy(v.data(), data.data() + begin, expected);
            t.data = std::move(v);
        }
        out.add(name, std::move(t));
    }
    if (out.empty()) fail_data("checkpoint '" + path.string() + "' contains no tensors");
    return out;
}

void save_checkpoint(const TensorMap& tensors, const std::filesystem::path& path) {
    if (tensors.empty()) fail_data("refusing to save an empty tensor map");

    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        t.validate(name);
        std::uint64_t bytes = static_cast<std::uint64_t>(t.numel()) * itemsize(t.dtype);
        json entry;
        entry["dtype"] = to_string(t.dtype);
        entry["shape"] = t.shape;
        entry["data_offsets"] = {offset, offset + bytes};
        header[name] = std::move(entry);
        offset += bytes;
    }
    std::string header_text = header.dump();

    std::ofstream outf(path, std::ios::binary | std::ios::trunc);
    if (!outf) fail_data("cannot write checkpoint '" + path.string() + "'");

    std::uint64_t header_len = header_text.size();
    std::uint8_t len_bytes[8];
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<std::uint8_t>((header_len >> (8 * i)) & 0xff);
    outf.write(reinterpret_cast<const char*>(len_bytes), 8);
    outf.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    for (const auto& [name, t] : tensors) {
        if (t.dtype == Dtype::f32) {
            const auto& v = t.f32();
            outf.write(reinterpret_cast<const char*>(v.data()),
                       static_cast<std::streamsize>(v.size() * sizeof(float)));
        } else {
            const auto& v = t.f64();
            outf.write(reinterpret_cast<const char*>(v.data()),
                       static_cast<std::streamsize>(v.size() * sizeof(double)));
        }
    }
    outf.flush();
    if (!outf) fail_data("write failed for checkpoint '" + path.string() + "'");
}

} // namespace cdsynth
