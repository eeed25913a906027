#pragma once

#include "coconet/backbone.hpp"
#include "coconet/fusion_net.hpp"
#include "coconet/image.hpp"

namespace coconet {

struct MedicalFusion {
    YCbCrImage ycbcr; // fused luminance, functional chroma untouched
    ColorImage rgb;
};

// The functional image's luminance takes the infrared slot, the MRI the
// visible slot. Chroma is copied through from the functional image.
MedicalFusion fuse_medical(const FusionNet& model, const Backbone& backbone, const ImagePlane& mri,
                           const ColorImage& functional);

// Luminance-only variant for single-channel functional scans.
ImagePlane fuse_medical_gray(const FusionNet& model, const Backbone& backbone, const ImagePlane& mri,
                             const ImagePlane& functional);

} // namespace coconet
