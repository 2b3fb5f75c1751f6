#include "mixsign/tensor/param_io.h"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "json.hpp"

namespace mixsign {

namespace {

void put_f64le(std::vector<unsigned char>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

double get_f64le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace

std::string parameter_manifest_text(const ParamList& params) {
    nlohmann::json j;
    j["version"] = 1;
    j["dtype"] = "float64-le";
    auto arr = nlohmann::json::array();
    for (const auto& p : params) arr.push_back({{"name", p.name}, {"shape", p.value.shape()}});
    j["parameters"] = std::move(arr);
    return j.dump(2) + "\n";
}

std::vector<unsigned char> parameter_blob_bytes(const ParamList& params) {
    std::vector<unsigned char> out;
    for (const auto& p : params)
        for (double v : p.value.data()) put_f64le(out, v);
    return out;
}

void save_parameters(const ParamList& params, const std::filesystem::path& manifest,
                     const std::filesystem::path& blob) {
    std::ofstream m(manifest, std::ios::binary);
    if (!m) throw std::runtime_error("cannot write " + manifest.string());
    m << parameter_manifest_text(params);
    const auto bytes = parameter_blob_bytes(params);
    std::ofstream b(blob, std::ios::binary);
    if (!b) throw std::runtime_error("cannot write " + blob.string());
    b.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!m || !b) throw std::runtime_error("write failed for " + manifest.string());
}

ParamList load_parameters(const std::filesystem::path& manifest, const std::filesystem::path& blob) {
    std::ifstream m(manifest);
    if (!m) throw std::runtime_error("cannot read " + manifest.string());
    const auto j = nlohmann::json::parse(m);
    std::ifstream b(blob, std::ios::binary);
    if (!b) throw std::runtime_error("cannot read " + blob.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());

    ParamList out;
    std::size_t offset = 0;
    for (const auto& e : j.at("parameters")) {
        Shape shape = e.at("shape").get<Shape>();
        const std::size_t n = shape_numel(shape);
        if (offset + 8 * n > bytes.size()) {
            throw std::runtime_error("parameter blob " + blob.string() + " is shorter than its manifest");
        }
        std::vector<double> data(n);
        for (std::size_t i = 0; i < n; ++i) data[i] = get_f64le(bytes.data() + offset + 8 * i);
        offset += 8 * n;
        out.push_back({e.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data))});
    }
    if (offset != bytes.size()) throw std::runtime_error("parameter blob " + blob.string() + " has trailing bytes");
    return out;
}

}  // namespace mixsign
