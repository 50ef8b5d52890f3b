#include "strack/tensor_io.hpp"

#include <cstring>
#include <fstream>

namespace strack {

namespace {
constexpr char kMagic[4] = {'S', 'P', 'T', '0'};
}

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write(kMagic, 4);
    uint32_t ndim = uint32_t(t.ndim());
    os.write(reinterpret_cast<const char*>(&ndim), 4);
    for (int i = 0; i < t.ndim(); ++i) {
        uint32_t d = uint32_t(t.dim(i));
        os.write(reinterpret_cast<const char*>(&d), 4);
    }
    uint8_t code = uint8_t(t.dtype());
    os.write(reinterpret_cast<const char*>(&code), 1);
    if (t.dtype() == Dtype::F32)
        os.write(reinterpret_cast<const char*>(t.data<float>()), t.numel() * 4);
    else
        os.write(reinterpret_cast<const char*>(t.data<double>()), t.numel() * 8);
    if (!os) throw IoError("write_tensor: stream write failed");
}

Tensor read_tensor(std::istream& is) {
    auto fail_at = [&](const char* what) {
        return ParseError(std::string("tensor: ") + what + " at offset " +
                          std::to_string(std::streamoff(is.tellg())));
    };
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw fail_at("bad magic");
    uint32_t ndim = 0;
    is.read(reinterpret_cast<char*>(&ndim), 4);
    if (!is || ndim > 8) throw fail_at("bad ndim");
    std::vector<int> shape(ndim);
    int64_t n = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
        uint32_t d = 0;
        is.read(reinterpret_cast<char*>(&d), 4);
        if (!is || d == 0 || d > (1u << 24)) throw fail_at("bad dimension");
        shape[i] = int(d);
        n *= d;
    }
    uint8_t code = 0;
    is.read(reinterpret_cast<char*>(&code), 1);
    if (!is || code > 1) throw fail_at("bad dtype code");
    Dtype dt = code == 0 ? Dtype::F32 : Dtype::F64;
    Tensor t = Tensor::zeros(shape, dt);
    if (dt == Dtype::F32)
        is.read(reinterpret_cast<char*>(t.mutable_data<float>()), n * 4);
    else
        is.read(reinterpret_cast<char*>(t.mutable_data<double>()), n * 8);
    if (!is) throw fail_at("truncated payload");
    return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_tensor: cannot open " + path);
    write_tensor(f, t);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_tensor: cannot open " + path);
    return read_tensor(f);
}

}  // namespace strack
