#ifndef DKVB_CHECKPOINT_HPP
#define DKVB_CHECKPOINT_HPP

#include <string>

#include "dkvb/baselines.hpp"
#include "dkvb/bottleneck.hpp"

namespace dkvb {

// On-disk containers. Both share the same skeleton — magic, u16 version,
// u32-length-prefixed JSON header, then raw little-endian arrays — and both
// round-trip bit-exactly: save -> load -> save reproduces the file byte for
// byte. Model files ("DKVBCKPT") store per-codebook keys, values, EMA
// accumulators (f32) and utilization counters (u64); projection matrices are
// regenerated from the config seed on load. Probe files ("DKVBPROB") store
// the dense parameter blocks.

void save_checkpoint(const BottleneckModel& model, const std::string& path);
BottleneckModel load_checkpoint(const std::string& path);

void save_probe(const LinearProbe& probe, const std::string& path);
void save_probe(const MlpProbe& probe, const std::string& path);
LinearProbe load_linear_probe(const std::string& path);
MlpProbe load_mlp_probe(const std::string& path);

enum class CheckpointKind { bottleneck, linear_probe, mlp_probe };

/// Identify what a checkpoint file contains without loading it fully.
CheckpointKind checkpoint_kind(const std::string& path);

}  // namespace dkvb

#endif  // DKVB_CHECKPOINT_HPP
