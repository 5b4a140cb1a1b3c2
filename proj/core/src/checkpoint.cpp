#include "maskint/checkpoint.hpp"

#include <zlib.h>

#include "maskint/binary_io.hpp"
#include "maskint/errors.hpp"
#include "maskint/run_config.hpp"

namespace maskint {

std::uint32_t Crc32(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

std::uint32_t CrcOf(const std::vector<std::uint8_t>& bytes, std::size_t from) {
  return Crc32(bytes.data() + from, bytes.size() - from);
}

}  // namespace

std::vector<std::uint8_t> SerializeCheckpoint(const Checkpoint& checkpoint) {
  io::ByteWriter w;
  w.Bytes("MCKP");
  w.U16(kCheckpointVersion);

  const std::string text = FormatModelConfig(checkpoint.config);
  w.U32(static_cast<std::uint32_t>(text.size()));
  w.Bytes(text);
  w.U32(Crc32(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));

  std::uint32_t count = 0;
  checkpoint.params.ForEach([&](const std::string&, const Tensor<float>&) { ++count; });
  w.U32(count);
  checkpoint.params.ForEach([&](const std::string& name, const Tensor<float>& t) {
    io::ByteWriter rec;
    rec.U16(static_cast<std::uint16_t>(name.size()));
    rec.Bytes(name);
    rec.U8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) rec.U32(static_cast<std::uint32_t>(e));
    for (float v : t.values()) rec.F32(v);
    w.Append(rec.bytes());
    w.U32(CrcOf(rec.bytes(), 0));
  });

  const bool has_codebooks = checkpoint.color.has_value() && checkpoint.structure.has_value();
  w.U8(has_codebooks ? 2 : 0);
  if (has_codebooks) {
    for (const Codebook* cb : {&*checkpoint.color, &*checkpoint.structure}) {
      const auto bytes = SerializeCodebook(*cb);
      w.U32(static_cast<std::uint32_t>(bytes.size()));
      w.Append(bytes);
      w.U32(CrcOf(bytes, 0));
    }
  }
  return w.bytes();
}

Checkpoint DeserializeCheckpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "checkpoint");
  r.Expect("MCKP");
  const std::uint16_t version = r.U16();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }

  const std::uint32_t text_len = r.U32();
  const auto* text_ptr = r.cursor();
  const std::string text = r.Bytes(text_len);
  if (r.U32() != Crc32(text_ptr, text_len)) throw FormatError("checkpoint: config CRC mismatch");

  Checkpoint out;
  try {
    out.config = ParseModelConfig(text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: bad model config: ") + e.what());
  }
  Rng dummy(0);
  out.params = ModelParameters<float>::Init(out.config, dummy);

  std::uint32_t expected = 0;
  out.params.ForEach([&](const std::string&, const Tensor<float>&) { ++expected; });
  const std::uint32_t count = r.U32();
  if (count != expected) {
    throw FormatError("checkpoint: " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(expected));
  }
  out.params.ForEach([&](const std::string& name, Tensor<float>& t) {
    const auto* start = r.cursor();
    const std::size_t begin = r.position();
    const std::string stored = r.Bytes(r.U16());
    if (stored != name) {
      throw FormatError("checkpoint: expected tensor '" + name + "', found '" + stored + "'");
    }
    const std::size_t rank = r.U8();
    Shape shape(rank);
    for (auto& e : shape) e = r.U32();
    if (shape != t.shape()) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + ShapeString(shape) +
                        ", expected " + ShapeString(t.shape()));
    }
    for (float& v : t.values()) v = r.F32();
    const std::size_t length = r.position() - begin;
    if (r.U32() != Crc32(start, length)) {
      throw FormatError("checkpoint: CRC mismatch in tensor '" + name + "'");
    }
  });

  const std::uint8_t codebooks = r.U8();
  if (codebooks != 0 && codebooks != 2) throw FormatError("checkpoint: bad codebook count");
  for (std::uint8_t i = 0; i < codebooks; ++i) {
    const std::uint32_t len = r.U32();
    const auto* start = r.cursor();
    io::ByteReader sub(start, len, "checkpoint codebook");
    r.Skip(len);
    if (r.U32() != Crc32(start, len)) throw FormatError("checkpoint: codebook CRC mismatch");
    Codebook cb = DeserializeCodebook(sub);
    sub.ExpectEnd();
    (i == 0 ? out.color : out.structure) = std::move(cb);
  }
  r.ExpectEnd();

  if (out.color && (out.color->channel != Channel::kColor ||
                    out.color->size != out.config.color_vocab)) {
    throw FormatError("checkpoint: color codebook does not match the model");
  }
  if (out.structure && (out.structure->channel != Channel::kStructure ||
                        out.structure->size != out.config.structure_vocab)) {
    throw FormatError("checkpoint: structure codebook does not match the model");
  }
  return out;
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  io::WriteFile(path, SerializeCheckpoint(checkpoint));
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  try {
    return DeserializeCheckpoint(io::ReadFile(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace maskint
