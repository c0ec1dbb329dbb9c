#include "irnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "irnet/errors.hpp"

namespace irnet {

namespace {

constexpr char kMagic[] = "IRNETCKPT"; // 9 bytes, no terminator on disk

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::string& out, const std::string& s) {
    put_u64(out, s.size());
    out.append(s);
}

void put_tensor(std::string& out, const Tensor& t) {
    put_u8(out, t.dtype() == Dtype::F32 ? 0 : 1);
    put_u64(out, t.rank());
    for (std::size_t i = 0; i < t.rank(); ++i)
        put_u64(out, static_cast<std::uint64_t>(t.dim(i)));
    if (t.dtype() == Dtype::F32) {
        const float* d = t.data<float>();
        for (std::int64_t i = 0; i < t.numel(); ++i)
            put_u32(out, std::bit_cast<std::uint32_t>(d[i]));
    } else {
        const double* d = t.data<double>();
        for (std::int64_t i = 0; i < t.numel(); ++i)
            put_u64(out, std::bit_cast<std::uint64_t>(d[i]));
    }
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void require(std::size_t n) const {
        if (pos + n > buf.size())
            throw IoError("checkpoint truncated: needed " + std::to_string(n) + " more bytes",
                          static_cast<std::int64_t>(pos));
    }
    std::uint8_t u8() {
        require(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint32_t u32() {
        require(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        require(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    std::string str() {
        const std::uint64_t n = u64();
        if (n > buf.size()) // cheap sanity before the real bounds check
            throw IoError("checkpoint corrupt: implausible string length " + std::to_string(n),
                          static_cast<std::int64_t>(pos));
        require(static_cast<std::size_t>(n));
        std::string s = buf.substr(pos, static_cast<std::size_t>(n));
        pos += static_cast<std::size_t>(n);
        return s;
    }
    Tensor tensor() {
        const std::uint8_t dt = u8();
        if (dt > 1)
            throw IoError("checkpoint corrupt: unknown dtype tag " + std::to_string(dt),
                          static_cast<std::int64_t>(pos - 1));
        const std::uint64_t rank = u64();
        if (rank > 8)
            throw IoError("checkpoint corrupt: implausible tensor rank " + std::to_string(rank),
                          static_cast<std::int64_t>(pos - 8));
        std::vector<std::int64_t> shape;
        for (std::uint64_t i = 0; i < rank; ++i)
            shape.push_back(static_cast<std::int64_t>(u64()));
        Tensor t = Tensor::zeros(shape, dt == 0 ? Dtype::F32 : Dtype::F64);
        if (dt == 0) {
            float* d = t.data<float>();
            for (std::int64_t i = 0; i < t.numel(); ++i)
                d[i] = std::bit_cast<float>(u32());
        } else {
            double* d = t.data<double>();
            for (std::int64_t i = 0; i < t.numel(); ++i)
                d[i] = std::bit_cast<double>(u64());
        }
        return t;
    }
};

void put_named_tensors(std::string& out,
                       const std::vector<std::pair<std::string, Tensor>>& list) {
    put_u64(out, list.size());
    for (const auto& [name, t] : list) {
        put_string(out, name);
        put_tensor(out, t);
    }
}

std::vector<std::pair<std::string, Tensor>> read_named_tensors(Reader& r) {
    const std::uint64_t n = r.u64();
    if (n > (1u << 20))
        throw IoError("checkpoint corrupt: implausible record count " + std::to_string(n),
                      static_cast<std::int64_t>(r.pos - 8));
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = r.str();
        out.emplace_back(std::move(name), r.tensor());
    }
    return out;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string out;
    out.append(kMagic, sizeof(kMagic) - 1);
    put_u32(out, Checkpoint::kVersion);
    put_string(out, ckpt.config_text);
    put_u64(out, ckpt.step);
    put_named_tensors(out, ckpt.params);
    put_u8(out, ckpt.has_optimizer ? 1 : 0);
    if (ckpt.has_optimizer) {
        put_u64(out, ckpt.adam_step);
        put_named_tensors(out, ckpt.adam_m);
        put_named_tensors(out, ckpt.adam_v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) throw IoError("short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};
    r.require(sizeof(kMagic) - 1);
    if (buf.compare(0, sizeof(kMagic) - 1, kMagic) != 0)
        throw IoError("not a checkpoint file (bad magic)", 0);
    r.pos = sizeof(kMagic) - 1;
    const std::uint32_t version = r.u32();
    if (version != Checkpoint::kVersion)
        throw IoError("checkpoint version " + std::to_string(version) + " unsupported (expect " +
                      std::to_string(Checkpoint::kVersion) + ")",
                      static_cast<std::int64_t>(sizeof(kMagic) - 1));
    Checkpoint ckpt;
    ckpt.config_text = r.str();
    ckpt.step = r.u64();
    ckpt.params = read_named_tensors(r);
    ckpt.has_optimizer = r.u8() != 0;
    if (ckpt.has_optimizer) {
        ckpt.adam_step = r.u64();
        ckpt.adam_m = read_named_tensors(r);
        ckpt.adam_v = read_named_tensors(r);
    }
    if (r.pos != buf.size())
        throw IoError("checkpoint has " + std::to_string(buf.size() - r.pos) +
                      " trailing bytes", static_cast<std::int64_t>(r.pos));
    return ckpt;
}

Checkpoint snapshot(Model& model, const Adam* adam, std::uint64_t step) {
    Checkpoint ckpt;
    ckpt.config_text = serialize_model_config(model.config());
    ckpt.step = step;
    for (const ParamRef& p : model.parameters()) {
        Tensor t = *p.tensor;
        t.drop_grad();
        ckpt.params.emplace_back(p.name, std::move(t));
    }
    if (adam) {
        ckpt.has_optimizer = true;
        ckpt.adam_step = adam->step_count();
        for (const auto& [name, slot] : adam->state()) {
            ckpt.adam_m.emplace_back(name, slot.m);
            ckpt.adam_v.emplace_back(name, slot.v);
        }
    }
    return ckpt;
}

void restore(Model& model, Adam* adam, const Checkpoint& ckpt) {
    if (serialize_model_config(model.config()) != ckpt.config_text)
        throw IoError("checkpoint model config does not match the constructed model");
    std::map<std::string, Tensor*> by_name;
    for (const ParamRef& p : model.parameters()) by_name[p.name] = p.tensor;
    if (by_name.size() != ckpt.params.size())
        throw IoError("checkpoint has " + std::to_string(ckpt.params.size()) +
                      " parameters, model has " + std::to_string(by_name.size()));
    for (const auto& [name, t] : ckpt.params) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint parameter '" + name + "' not in model");
        if (!it->second->same_shape(t) || it->second->dtype() != t.dtype())
            throw IoError("checkpoint parameter '" + name + "' has shape " + t.shape_str() +
                          ", model expects " + it->second->shape_str());
        *it->second = t;
    }
    if (adam && ckpt.has_optimizer) {
        if (ckpt.adam_m.size() != ckpt.adam_v.size())
            throw IoError("checkpoint optimizer state is inconsistent");
        std::map<std::string, Adam::Slot> state;
        for (std::size_t i = 0; i < ckpt.adam_m.size(); ++i) {
            if (ckpt.adam_m[i].first != ckpt.adam_v[i].first)
                throw IoError("checkpoint optimizer state is inconsistent");
            state[ckpt.adam_m[i].first] = {ckpt.adam_m[i].second, ckpt.adam_v[i].second};
        }
        adam->restore(ckpt.adam_step, std::move(state));
    }
}

} // namespace irnet
