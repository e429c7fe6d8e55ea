#include "readmit/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "readmit/errors.hpp"

namespace readmit {

namespace {

constexpr const char *kMagic = "readmit-checkpoint v1";

std::string hex16(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void put_f32_le(std::string &out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    out.push_back(static_cast<char>(bits & 0xff));
    out.push_back(static_cast<char>((bits >> 8) & 0xff));
    out.push_back(static_cast<char>((bits >> 16) & 0xff));
    out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float get_f32_le(const char *p) {
    const auto *u = reinterpret_cast<const unsigned char *>(p);
    uint32_t bits = static_cast<uint32_t>(u[0]) | (static_cast<uint32_t>(u[1]) << 8) |
                    (static_cast<uint32_t>(u[2]) << 16) | (static_cast<uint32_t>(u[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

[[noreturn]] void malformed(const std::string &path, const std::string &what) {
    throw InvalidConfig("checkpoint " + path + " is malformed: " + what);
}

} // namespace

void save_checkpoint(const std::string &path, const EncoderState &state) {
    std::string out;
    out += kMagic;
    out += '\n';
    out += "vocab_hash " + hex16(state.vocab_hash) + '\n';
    for (const auto &[k, v] : state.config.to_map()) // std::map: sorted, stable
        out += "config " + k + "=" + v + '\n';
    out += "tensors " + std::to_string(state.params.size()) + '\n';
    for (const auto &[name, t] : state.params) {
        out += name + ' ' + std::to_string(t.rows()) + ' ' + std::to_string(t.cols()) + '\n';
        out.reserve(out.size() + static_cast<size_t>(t.size()) * 4);
        for (int64_t i = 0; i < t.size(); ++i) put_f32_le(out, t.data()[i]);
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw MissingArtifact("cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw MissingArtifact("failed writing checkpoint " + path);
}

EncoderState load_checkpoint(const std::string &path, uint64_t expected_vocab_hash) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifact("checkpoint " + path + " does not exist");

    std::string line;
    if (!std::getline(f, line) || line != kMagic) malformed(path, "bad format tag");
    if (!std::getline(f, line) || line.rfind("vocab_hash ", 0) != 0)
        malformed(path, "missing vocab_hash");
    uint64_t stored_hash = std::stoull(line.substr(11), nullptr, 16);

    std::map<std::string, std::string> cfg_map;
    size_t n_tensors = 0;
    while (std::getline(f, line)) {
        if (line.rfind("config ", 0) == 0) {
            std::string kv = line.substr(7);
            auto eq = kv.find('=');
            if (eq == std::string::npos) malformed(path, "config line without '='");
            cfg_map[kv.substr(0, eq)] = kv.substr(eq + 1);
        } else if (line.rfind("tensors ", 0) == 0) {
            n_tensors = std::stoul(line.substr(8));
            break;
        } else {
            malformed(path, "unexpected header line '" + line + "'");
        }
    }

    EncoderState state;
    state.config = EncoderConfig::from_map(cfg_map);
    state.vocab_hash = stored_hash;
    if (expected_vocab_hash != 0 && stored_hash != expected_vocab_hash)
        throw VocabHashMismatch("checkpoint " + path + " was trained with vocabulary " +
                                hex16(stored_hash) + " but vocabulary " +
                                hex16(expected_vocab_hash) + " is loaded");

    state.params.reserve(n_tensors);
    for (size_t i = 0; i < n_tensors; ++i) {
        if (!std::getline(f, line)) malformed(path, "truncated tensor table");
        std::istringstream hdr(line);
        std::string name;
        int rows = 0, cols = 0;
        if (!(hdr >> name >> rows >> cols) || rows <= 0 || cols <= 0)
            malformed(path, "bad tensor header '" + line + "'");
        TensorT<float> t(rows, cols);
        std::string raw(static_cast<size_t>(t.size()) * 4, '\0');
        if (!f.read(raw.data(), static_cast<std::streamsize>(raw.size())))
            malformed(path, "truncated values for tensor " + name);
        for (int64_t j = 0; j < t.size(); ++j) t.data()[j] = get_f32_le(raw.data() + j * 4);
        char nl;
        if (!f.get(nl) || nl != '\n') malformed(path, "missing separator after tensor " + name);
        state.params.emplace_back(name, std::move(t));
    }
    return state;
}

} // namespace readmit
