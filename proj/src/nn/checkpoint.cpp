#include "pospool/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

namespace pospool {

using nlohmann::json;

namespace {

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class U>
U get_le(const std::uint8_t* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
    json table = json::array();
    std::uint64_t offset = 0;
    for (const auto& p : model.parameters()) {
        table.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
        offset += p.tensor.numel() * sizeof(float);
    }
    const json header = {{"spec", json::parse(spec_to_json(model.spec()))}, {"tensors", std::move(table)}};
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.reserve(out.size() + offset);
    for (const auto& p : model.parameters())
        for (float f : p.tensor.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

Model deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    constexpr std::size_t prefix = 4 + 4 + 8;
    if (bytes.size() < prefix) throw CheckpointError("truncated file: " + std::to_string(bytes.size()) + " bytes");
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CheckpointError("bad magic, expected PPL1");
    const auto version = get_le<std::uint32_t>(bytes.data() + 4);
    if (version != kCheckpointVersion) throw CheckpointError("unsupported version " + std::to_string(version));
    const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
    if (header_len > bytes.size() - prefix) throw CheckpointError("truncated header");

    json header;
    ModelSpec spec;
    try {
        header = json::parse(bytes.begin() + prefix, bytes.begin() + prefix + static_cast<std::ptrdiff_t>(header_len));
        spec = spec_from_json(header.at("spec").dump());
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed header: ") + e.what());
    } catch (const Error& e) {
        throw CheckpointError(std::string("malformed header: ") + e.what());
    }

    const std::size_t blob_start = prefix + header_len;
    const std::size_t blob_size = bytes.size() - blob_start;
    std::vector<NamedTensor> params;
    try {
        for (const json& t : header.at("tensors")) {
            const Shape shape = t.at("shape").get<Shape>();
            const auto offset = t.at("offset").get<std::uint64_t>();
            const std::size_t count = numel(shape);
            if (offset > blob_size || count * sizeof(float) > blob_size - offset)
                throw CheckpointError("truncated tensor '" + t.at("name").get<std::string>() + "'");
            Array<float> a(shape);
            const std::uint8_t* src = bytes.data() + blob_start + offset;
            for (std::size_t i = 0; i < count; ++i)
                a.data[i] = std::bit_cast<float>(get_le<std::uint32_t>(src + 4 * i));
            params.push_back({t.at("name").get<std::string>(), Tensor(std::move(a), true)});
        }
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed tensor table: ") + e.what());
    }
    try {
        return Model(std::move(spec), std::move(params));
    } catch (const CheckpointError&) {
        throw;
    } catch (const Error& e) {
        throw CheckpointError(std::string("inconsistent checkpoint: ") + e.what());
    }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = serialize_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace pospool
