#pragma once

#include <memory>
#include <string>

#include "tagasc/backbone.hpp"
#include "tagasc/fusion.hpp"

namespace tagasc {

// Representation dimension handed to the SVM back-end for a given fusion
// mode (codecat concatenates the tag onto the code).
std::size_t fused_code_dim(const BackboneConfig& bcfg, const FusionConfig& fcfg,
                           std::size_t tag_dim);

// Backbone plus fusion parameters for one configuration. The backbone is
// always fully built; modes that replace its code or output FC own the
// replacement layer and drop the unused one from parameters().
class FusedModel {
public:
    FusedModel(const BackboneConfig& bcfg, const FusionConfig& fcfg, std::size_t tag_dim,
               Rng& rng);

    struct Forward {
        TensorPtr feature_map;  // pre-pooling (attended in attention modes)
        TensorPtr pooled;
        TensorPtr code;        // code_dim vector entering the classifier
        TensorPtr final_code;  // representation handed to the SVM
        TensorPtr logits;
    };

    // tag may be null only in mode none.
    Forward forward(const TensorPtr& waveform, const TensorPtr& tag, BnMode mode);

    std::vector<TensorPtr> parameters();
    std::vector<BatchNormState*> bn_states();

    const BackboneConfig& backbone_config() const { return bcfg_; }
    const FusionConfig& fusion_config() const { return fcfg_; }
    std::size_t tag_dim() const { return tag_dim_; }

    Backbone backbone;

    // fusion-owned layers, populated per mode
    TagStack concat_stack;       // before_code / combined_separate
    TagStack att_stack;          // attention / combined_separate
    TagStack shared_stack;       // combined_shared
    DenseLayer fused_code_fc;    // before_code / combined modes
    DenseLayer fused_out_fc;     // codecat

private:
    BackboneConfig bcfg_;
    FusionConfig fcfg_;
    std::size_t tag_dim_ = 0;
};

// Binary checkpoint: magic, config block, parameter tensors in build order,
// then batch-norm running statistics. Little-endian 64-bit floats; save and
// load round-trip bit-exactly.
void save_checkpoint(const std::string& path, FusedModel& model);
std::unique_ptr<FusedModel> load_checkpoint(const std::string& path);

}  // namespace tagasc
