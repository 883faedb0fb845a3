#include "fedvlf/nn/serialize.hpp"

#include <fstream>

#include "fedvlf/binary_io.hpp"
#include "fedvlf/error.hpp"

namespace fedvlf::nn {

namespace {
constexpr char kMagic[4] = {'V', 'L', 'F', 'M'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string serialize_params(const ModelParams<float>& params) {
  const ModelDims& d = params.dims();
  std::string buf(kMagic, 4);
  buf.reserve(serialized_bytes(d));
  binary::put<std::uint32_t>(buf, kVersion);
  for (int v : {d.input, d.hidden, d.embed, d.dense, d.output, d.vocab}) binary::put<std::uint32_t>(buf, static_cast<std::uint32_t>(v));
  for (Eigen::Index i = 0; i < params.flat().size(); ++i) binary::put<float>(buf, params.flat()[i]);
  return buf;
}

ModelParams<float> deserialize_params(const std::string& bytes) {
  binary::Reader r(bytes.data(), bytes.size());
  if (r.bytes(4) != std::string(kMagic, 4)) throw FormatError("not a parameter file (bad magic)");
  if (const auto v = r.get<std::uint32_t>(); v != kVersion) {
    throw FormatError("unsupported parameter file version " + std::to_string(v));
  }
  ModelDims d;
  int* fields[] = {&d.input, &d.hidden, &d.embed, &d.dense, &d.output, &d.vocab};
  for (int* f : fields) {
    const auto v = r.get<std::uint32_t>();
    if (v == 0 || v > (1u << 20)) throw FormatError("implausible model dimension in parameter file");
    *f = static_cast<int>(v);
  }
  if (r.remaining() != payload_bytes(d)) {
    throw FormatError("parameter payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(payload_bytes(d)));
  }
  ModelParams<float> params(d);
  for (Eigen::Index i = 0; i < params.flat().size(); ++i) params.flat()[i] = r.get<float>();
  return params;
}

void save_params(const std::string& path, const ModelParams<float>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const std::string bytes = serialize_params(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

ModelParams<float> load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return deserialize_params(binary::slurp(in));
}

}  // namespace fedvlf::nn
