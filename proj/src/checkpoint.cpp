#include "fusionnet/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "fusionnet/errors.hpp"

namespace fusionnet {

namespace {

template <class T>
T to_little(T value) {
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        return value;
    } else {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &value, sizeof(T));
        std::reverse(bytes, bytes + sizeof(T));
        std::memcpy(&value, bytes, sizeof(T));
        return value;
    }
}

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    template <class T>
    void pod(T value) {
        value = to_little(value);
        out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
    }
    void text(const std::string& s) {
        pod<std::uint64_t>(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    template <class Real>
    void tensor(const std::string& name, const Tensor<Real>& t) {
        text(name);
        pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) {
            pod<std::uint64_t>(d);
        }
        pod<std::uint8_t>(sizeof(Real));
        if constexpr (std::endian::native == std::endian::little) {
            out_.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
        } else {
            for (Real v : t.values()) {
                pod(v);
            }
        }
    }
    template <class Real>
    void tensors(const std::vector<NamedTensor<Real>>& list) {
        pod<std::uint32_t>(static_cast<std::uint32_t>(list.size()));
        for (const auto& nt : list) {
            tensor(nt.name, nt.value);
        }
    }
    template <class Real>
    void buffers(const std::vector<Tensor<Real>>& list) {
        pod<std::uint32_t>(static_cast<std::uint32_t>(list.size()));
        for (const auto& t : list) {
            tensor("", t);
        }
    }

private:
    std::ostream& out_;
};

class Reader {
public:
    Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

    void raw(void* dst, std::size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw_error(ErrorKind::io, path_ + ": checkpoint is truncated");
        }
    }
    template <class T>
    T pod() {
        T value;
        raw(&value, sizeof(T));
        return to_little(value);
    }
    std::string text() {
        const auto n = pod<std::uint64_t>();
        if (n > (1ULL << 34)) {
            throw_error(ErrorKind::format, path_ + ": implausible string length");
        }
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    template <class Real>
    NamedTensor<Real> tensor() {
        NamedTensor<Real> out;
        out.name = text();
        const auto rank = pod<std::uint32_t>();
        if (rank > 8) {
            throw_error(ErrorKind::format, path_ + ": tensor '" + out.name + "' has rank " + std::to_string(rank));
        }
        Shape shape(rank);
        for (auto& d : shape) {
            d = static_cast<std::size_t>(pod<std::uint64_t>());
        }
        const auto width = pod<std::uint8_t>();
        if (width != sizeof(Real)) {
            throw_error(ErrorKind::format, path_ + ": tensor '" + out.name + "' stored with " +
                                               std::to_string(width * 8) + "-bit elements");
        }
        if (shape_size(shape) > (1ULL << 32)) {
            throw_error(ErrorKind::format, path_ + ": implausible tensor size");
        }
        out.value = Tensor<Real>(shape);
        raw(out.value.data(), out.value.size() * sizeof(Real));
        if constexpr (std::endian::native != std::endian::little) {
            for (Real& v : out.value.values()) {
                v = to_little(v);
            }
        }
        return out;
    }
    template <class Real>
    std::vector<NamedTensor<Real>> tensors() {
        const auto n = pod<std::uint32_t>();
        std::vector<NamedTensor<Real>> out;
        for (std::uint32_t i = 0; i < n; ++i) {
            out.push_back(tensor<Real>());
        }
        return out;
    }
    template <class Real>
    std::vector<Tensor<Real>> buffers() {
        std::vector<Tensor<Real>> out;
        for (auto& nt : tensors<Real>()) {
            out.push_back(std::move(nt.value));
        }
        return out;
    }

private:
    std::istream& in_;
    std::string path_;
};

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw_error(ErrorKind::io, "cannot open checkpoint " + path.string());
    }
    return in;
}

int read_header(Reader& reader, const std::filesystem::path& path) {
    char magic[4];
    reader.raw(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw_error(ErrorKind::format, path.string() + ": not a checkpoint (bad magic)");
    }
    const auto version = reader.pod<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw_error(ErrorKind::format, path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto width = reader.pod<std::uint32_t>();
    if (width != 32 && width != 64) {
        throw_error(ErrorKind::format, path.string() + ": bad element width " + std::to_string(width));
    }
    return static_cast<int>(width);
}

}  // namespace

template <class Real>
std::vector<NamedTensor<Real>> snapshot(const Network<Real>& net) {
    std::vector<NamedTensor<Real>> out;
    for (const Parameter<Real>* p : net.parameters()) {
        out.push_back({p->name, p->value});
    }
    return out;
}

template <class Real>
void restore(Network<Real>& net, const std::vector<NamedTensor<Real>>& params) {
    std::map<std::string, const Tensor<Real>*> by_name;
    for (const auto& nt : params) {
        by_name[nt.name] = &nt.value;
    }
    const auto targets = net.parameters();
    if (targets.size() != params.size()) {
        throw_error(ErrorKind::config, "checkpoint holds " + std::to_string(params.size()) +
                                           " parameters, network has " + std::to_string(targets.size()));
    }
    for (Parameter<Real>* p : targets) {
        const auto it = by_name.find(p->name);
        if (it == by_name.end()) {
            throw_error(ErrorKind::config, "checkpoint lacks parameter '" + p->name + "'");
        }
        if (it->second->shape() != p->value.shape()) {
            throw_error(ErrorKind::config, "parameter '" + p->name + "' is " + shape_string(it->second->shape()) +
                                               " in the checkpoint but " + shape_string(p->value.shape()) +
                                               " in the network");
        }
        p->value = *it->second;
    }
}

template <class Real>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Real>& ckpt) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw_error(ErrorKind::io, "cannot write checkpoint " + tmp.string());
        }
        Writer w(out);
        out.write(kCheckpointMagic, 4);
        w.pod<std::uint32_t>(kCheckpointVersion);
        w.pod<std::uint32_t>(sizeof(Real) * 8);
        w.text(ckpt.config_text);
        w.pod<std::uint64_t>(ckpt.epoch);
        w.text(ckpt.rng_state);
        w.text(ckpt.log_text);
        w.pod<std::int64_t>(ckpt.best_epoch);
        w.pod<std::uint64_t>(ckpt.best_val_hundredths);
        w.pod<double>(ckpt.best_val_loss);
        w.tensors(ckpt.params);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.optimizer_kind));
        w.pod<std::uint64_t>(ckpt.optimizer.step);
        w.buffers(ckpt.optimizer.first);
        w.buffers(ckpt.optimizer.second);
        w.tensors(ckpt.best_params);
        out.flush();
        if (!out) {
            throw_error(ErrorKind::io, "failed writing checkpoint " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw_error(ErrorKind::io, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
    }
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    Reader r(in, path.string());
    const int width = read_header(r, path);
    if (width != static_cast<int>(sizeof(Real) * 8)) {
        throw_error(ErrorKind::format, path.string() + ": checkpoint holds " + std::to_string(width) +
                                           "-bit parameters, expected " + std::to_string(sizeof(Real) * 8));
    }
    Checkpoint<Real> ckpt;
    ckpt.config_text = r.text();
    ckpt.epoch = r.pod<std::uint64_t>();
    ckpt.rng_state = r.text();
    ckpt.log_text = r.text();
    ckpt.best_epoch = r.pod<std::int64_t>();
    ckpt.best_val_hundredths = r.pod<std::uint64_t>();
    ckpt.best_val_loss = r.pod<double>();
    ckpt.params = r.tensors<Real>();
    const auto kind = r.pod<std::uint32_t>();
    if (kind > static_cast<std::uint32_t>(OptimizerKind::rmsprop)) {
        throw_error(ErrorKind::format, path.string() + ": unknown optimizer code " + std::to_string(kind));
    }
    ckpt.optimizer_kind = static_cast<OptimizerKind>(kind);
    ckpt.optimizer.step = r.pod<std::uint64_t>();
    ckpt.optimizer.first = r.buffers<Real>();
    ckpt.optimizer.second = r.buffers<Real>();
    ckpt.best_params = r.tensors<Real>();
    return ckpt;
}

int checkpoint_element_width(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    Reader r(in, path.string());
    return read_header(r, path);
}

#define FUSIONNET_INSTANTIATE(Real)                                                                       \
    template std::vector<NamedTensor<Real>> snapshot(const Network<Real>&);                               \
    template void restore(Network<Real>&, const std::vector<NamedTensor<Real>>&);                         \
    template void save_checkpoint(const std::filesystem::path&, const Checkpoint<Real>&);                 \
    template Checkpoint<Real> load_checkpoint(const std::filesystem::path&);

FUSIONNET_INSTANTIATE(float)
FUSIONNET_INSTANTIATE(double)

#undef FUSIONNET_INSTANTIATE

}  // namespace fusionnet
