#include "pmt/progressive/checkpoint.hpp"

#include <zlib.h>

#include <fmt/format.h>

#include "pmt/core/binio.hpp"
#include "pmt/core/error.hpp"
#include "pmt/progressive/trainer.hpp"

namespace pmt::progressive {
namespace {

constexpr char kMagic[] = "PMTCKPT1";
constexpr std::size_t kMagicLen = 8;
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 28;

void put_block(ByteWriter& out, const ParamSet& params) {
  out.put_u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    out.put_string(name);
    out.put_u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) out.put_u32(static_cast<std::uint32_t>(d));
    out.put_f32_array(t.data());
  }
}

ParamSet get_block(ByteReader& in, bool requires_grad) {
  ParamSet params;
  const std::uint32_t count = in.get_u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.get_string();
    const std::uint32_t rank = in.get_u32();
    if (rank > kMaxRank) throw FormatError(fmt::format("{}: tensor {} has rank {}", in.what(), name, rank));
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = in.get_u32();
      n *= d;
      if (d == 0 || n > kMaxElements) {
        throw FormatError(fmt::format("{}: tensor {} has bad dims", in.what(), name));
      }
    }
    std::vector<float> values(n);
    in.get_f32_array(values);
    params.add(std::move(name), Tensor(std::move(shape), std::move(values), requires_grad));
  }
  return params;
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_checkpoint(std::span<const segnet::ModelPair> pairs,
                                            const nlohmann::json& setup,
                                            std::span<const std::uint8_t> state) {
  ByteWriter out;
  out.put_chars(std::string_view(kMagic, kMagicLen));
  out.put_u32(kCheckpointVersion);
  out.put_u32(static_cast<std::uint32_t>(pairs.size()));
  for (const auto& p : pairs) {
    out.put_u32(static_cast<std::uint32_t>(p.pair_id));
    out.put_f64(p.ema_alpha);
    put_block(out, p.student);
    put_block(out, p.teacher);
  }
  out.put_string(setup.dump());
  out.put_u32(static_cast<std::uint32_t>(state.size()));
  out.put_bytes(state);
  const std::uint32_t crc = crc32_of(out.bytes());
  out.put_u32(crc);
  return out.take();
}

CheckpointContents decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what) {
  if (bytes.size() < kMagicLen ||
      std::string(bytes.begin(), bytes.begin() + kMagicLen) != std::string(kMagic, kMagicLen)) {
    throw FormatError(what + ": bad magic (not a PMTCKPT1 checkpoint)");
  }
  if (bytes.size() < kMagicLen + 12) throw FormatError(what + ": truncated");
  const auto payload = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4), what);
  ByteReader in(payload, what);
  in.get_chars(kMagicLen);
  if (tail.get_u32() != crc32_of(payload)) throw FormatError(what + ": checksum mismatch");
  const std::uint32_t version = in.get_u32();
  if (version != kCheckpointVersion) {
    throw FormatError(fmt::format("{}: checkpoint version {} (expected {})", what, version,
                                  kCheckpointVersion));
  }

  CheckpointContents c;
  const std::uint32_t n_pairs = in.get_u32();
  std::vector<std::pair<int, double>> ids;
  std::vector<std::pair<ParamSet, ParamSet>> blocks;
  for (std::uint32_t i = 0; i < n_pairs; ++i) {
    const int id = static_cast<int>(in.get_u32());
    const double alpha = in.get_f64();
    ParamSet student = get_block(in, true);
    ParamSet teacher = get_block(in, false);
    ids.emplace_back(id, alpha);
    blocks.emplace_back(std::move(student), std::move(teacher));
  }
  const std::string setup_text = in.get_string();
  try {
    c.setup = nlohmann::json::parse(setup_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": bad setup JSON: " + e.what());
  }
  const std::uint32_t state_len = in.get_u32();
  auto state = in.get_bytes(state_len);
  c.state.assign(state.begin(), state.end());
  if (!in.at_end()) throw FormatError(what + ": trailing bytes before checksum");

  segnet::SegNetConfig net;
  if (c.setup.is_object() && c.setup.contains("model")) net = model_config_from_json(c.setup["model"]).net;
  const ParamSet skeleton = segnet::init_params<float>(net, 0);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (!blocks[i].first.same_layout(skeleton) || !blocks[i].second.same_layout(skeleton)) {
      throw FormatError(fmt::format("{}: pair {} does not match the model config", what, i));
    }
    segnet::ModelPair p;
    p.config = net;
    p.pair_id = ids[i].first;
    p.ema_alpha = ids[i].second;
    p.student = std::move(blocks[i].first);
    p.teacher = std::move(blocks[i].second);
    c.pairs.push_back(std::move(p));
  }
  return c;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const segnet::ModelPair> pairs,
                      const nlohmann::json& setup, std::span<const std::uint8_t> state) {
  write_file(path, encode_checkpoint(pairs, setup, state));
}

CheckpointContents read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

}  // namespace pmt::progressive
