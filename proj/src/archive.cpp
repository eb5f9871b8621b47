#include "stroke/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "stroke/errors.hpp"

static_assert(std::endian::native == std::endian::little, "archive payload is little-endian");

namespace stroke {

namespace {
constexpr char kMagic[8] = {'S', 'T', 'K', 'A', 'R', 'C', 'H', '1'};
}

const Tensor* Archive::find(const std::string& name) const {
    for (const NamedTensor& t : tensors)
        if (t.name == name) return &t.tensor;
    return nullptr;
}

void write_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                   const nlohmann::json& meta) {
    nlohmann::json header;
    header["meta"] = meta;
    nlohmann::json list = nlohmann::json::array();
    uint64_t offset = 0;
    for (const NamedTensor& t : tensors) {
        nlohmann::json e;
        e["name"] = t.name;
        e["shape"] = t.tensor.shape();
        e["dtype"] = "f64";
        e["offset"] = offset;
        list.push_back(std::move(e));
        offset += static_cast<uint64_t>(t.tensor.size()) * sizeof(double);
    }
    header["tensors"] = std::move(list);
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open archive for writing: " + path.string());
    f.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const NamedTensor& t : tensors)
        f.write(reinterpret_cast<const char*>(t.tensor.data()),
                static_cast<std::streamsize>(t.tensor.size() * sizeof(double)));
    if (!f) throw IoError("archive write failed: " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open archive: " + path.string());
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw SchemaError("not a parameter archive: " + path.string());
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f) throw SchemaError("truncated archive header: " + path.string());
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw SchemaError("truncated archive header: " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("archive header is not valid JSON: " + std::string(e.what()));
    }
    Archive a;
    a.meta = header.value("meta", nlohmann::json::object());
    for (const auto& e : header.at("tensors")) {
        NamedTensor t;
        t.name = e.at("name").get<std::string>();
        std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
        if (e.at("dtype").get<std::string>() != "f64")
            throw SchemaError("unsupported dtype for tensor " + t.name);
        t.tensor = Tensor::zeros(shape);
        f.read(reinterpret_cast<char*>(t.tensor.data()),
               static_cast<std::streamsize>(t.tensor.size() * sizeof(double)));
        if (!f) throw SchemaError("archive payload truncated at tensor " + t.name);
        a.tensors.push_back(std::move(t));
    }
    return a;
}

void write_store_archive(const std::filesystem::path& path, const ParamStore& store, const nlohmann::json& meta) {
    std::vector<NamedTensor> ts;
    for (const Parameter* p : store.all()) ts.push_back(NamedTensor{p->name, p->value});
    write_archive(path, ts, meta);
}

void load_archive_into_store(const Archive& a, ParamStore& store) {
    std::vector<std::string> missing, unexpected, mismatched;
    for (const Parameter* p : store.all())
        if (!a.find(p->name)) missing.push_back(p->name);
    for (const NamedTensor& t : a.tensors) {
        const Parameter* p = const_cast<ParamStore&>(store).find(t.name);
        if (!p)
            unexpected.push_back(t.name);
        else if (!(p->value.shape() == t.tensor.shape()))
            mismatched.push_back(t.name + " archive" + t.tensor.shape_str() + " model" + p->value.shape_str());
    }
    if (!missing.empty() || !unexpected.empty() || !mismatched.empty()) {
        std::string msg = "parameter schema mismatch:";
        auto join = [&msg](const char* tag, const std::vector<std::string>& v) {
            if (v.empty()) return;
            msg += std::string(" ") + tag + " [";
            for (size_t i = 0; i < v.size(); ++i) msg += (i ? ", " : "") + v[i];
            msg += "]";
        };
        join("missing", missing);
        join("unexpected", unexpected);
        join("shape-mismatch", mismatched);
        throw SchemaError(msg);
    }
    for (const NamedTensor& t : a.tensors) store.get(t.name).value = t.tensor;
}

}  // namespace stroke
