#include "coconet/medical.hpp"

#include "coconet/error.hpp"

#include <fmt/format.h>

namespace coconet {

MedicalFusion fuse_medical(const FusionNet& model, const Backbone& backbone, const ImagePlane& mri,
                           const ColorImage& functional) {
    if (functional.rows != mri.rows() || functional.cols != mri.cols()) {
        throw DataError(fmt::format("functional image is {}x{}, MRI is {}x{}", functional.rows, functional.cols, mri.rows(),
                                    mri.cols()));
    }
    YCbCrImage split = rgb_to_ycbcr(functional);
    const ImagePlane fused = model.forward_fuse(backbone, split.y, mri);
    MedicalFusion out{{normalize(fused, RangeTag::Unit), std::move(split.cb), std::move(split.cr)}, {}};
    out.rgb = ycbcr_to_rgb(out.ycbcr);
    return out;
}

ImagePlane fuse_medical_gray(const FusionNet& model, const Backbone& backbone, const ImagePlane& mri,
                             const ImagePlane& functional) {
    return model.forward_fuse(backbone, functional, mri);
}

} // namespace coconet
