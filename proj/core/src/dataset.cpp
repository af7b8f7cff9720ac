#include "drivelab/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace drivelab::imitation {

namespace {

constexpr char kMagic[8] = {'D', 'L', 'D', 'S', '0', '0', '0', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
    const unsigned char* p;
    const unsigned char* end;
    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end - p) < n) throw std::runtime_error("dataset: truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        p += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        p += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::uint8_t u8() {
        need(1);
        return *p++;
    }
};

}  // namespace

bool LabeledExample::operator==(const LabeledExample& o) const {
    return record_bytes(*this) == record_bytes(o);
}

void Dataset::append(const Dataset& other) {
    examples.insert(examples.end(), other.examples.begin(), other.examples.end());
}

std::string record_bytes(const LabeledExample& ex) {
    std::string out;
    out.reserve(perception::kObsSize * 4 + 9 + perception::kLabelCount * 8 + 13);
    for (float v : ex.obs.grid) put_f32(out, v);
    put_f64(out, ex.ref_action.steer);
    out.push_back(ex.ref_action.brake ? 1 : 0);
    for (double v : ex.labels.to_array()) put_f64(out, v);
    put_u32(out, ex.source_iteration);
    out.push_back(static_cast<char>(ex.controller_tag));
    put_u32(out, ex.episode_id);
    put_u32(out, ex.step_in_episode);
    return out;
}

std::vector<std::string> canonical_records(const Dataset& ds) {
    std::vector<std::string> recs;
    recs.reserve(ds.examples.size());
    for (const auto& ex : ds.examples) recs.push_back(record_bytes(ex));
    std::sort(recs.begin(), recs.end());
    return recs;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path.string());
    out.write(kMagic, sizeof(kMagic));
    std::string header;
    put_u32(header, kVersion);
    put_u64(header, ds.examples.size());
    put_u32(header, perception::kObsSize);
    put_u32(header, perception::kLabelCount);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& ex : ds.examples) {
        const std::string rec = record_bytes(ex);
        out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    }
    if (!out) throw std::runtime_error("save_dataset: write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw std::runtime_error("load_dataset: bad magic in " + path.string());
    Reader r{reinterpret_cast<const unsigned char*>(bytes.data()) + 8,
             reinterpret_cast<const unsigned char*>(bytes.data()) + bytes.size()};
    const std::uint32_t version = r.u32();
    if (version != kVersion) throw std::runtime_error("load_dataset: unsupported version");
    const std::uint64_t count = r.u64();
    const std::uint32_t obs_len = r.u32();
    const std::uint32_t label_count = r.u32();
    if (obs_len != perception::kObsSize || label_count != perception::kLabelCount)
        throw std::runtime_error("load_dataset: record shape mismatch in " + path.string());
    Dataset ds;
    ds.examples.reserve(count);
    for (std::uint64_t n = 0; n < count; ++n) {
        LabeledExample ex;
        for (int i = 0; i < perception::kObsSize; ++i)
            ex.obs.grid[static_cast<std::size_t>(i)] = r.f32();
        const double steer = r.f64();
        const bool brake = r.u8() != 0;
        ex.ref_action = sim::Action(steer, brake);
        std::array<double, perception::kLabelCount> arr;
        for (auto& v : arr) v = r.f64();
        ex.labels = perception::LabelVector::from_array(arr);
        ex.source_iteration = r.u32();
        ex.controller_tag = static_cast<sim::ControllerTag>(r.u8());
        ex.episode_id = r.u32();
        ex.step_in_episode = r.u32();
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

void write_observation_csv(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_observation_csv: cannot open " + path.string());
    char buf[32];
    for (const auto& ex : ds.examples) {
        std::string line;
        line.reserve(perception::kObsSize * 6 + 256);
        for (int i = 0; i < perception::kObsSize; ++i) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(ex.obs.grid[static_cast<std::size_t>(i)]));
            if (i) line += ',';
            line += buf;
        }
        for (double v : ex.labels.to_array()) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            line += ',';
            line += buf;
        }
        line += '\n';
        out << line;
    }
}

}  // namespace drivelab::imitation
