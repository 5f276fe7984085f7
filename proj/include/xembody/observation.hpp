#pragma once

#include <map>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "xembody/autodiff.hpp"

namespace xembody {

/// RGB image with values in [0, 1], stored as [3, H*W].
struct Image {
  std::string view;
  ImageDims dims{3, 0, 0};
  MatF pixels;

  static Image zeros(const std::string& view, int height, int width) {
    return {view, {3, height, width}, MatF::Zero(3, static_cast<Eigen::Index>(height) * width)};
  }
};

/// Everything one embodiment observes at one timestep. Only groups the
/// embodiment actually has are present.
struct ObservationFrame {
  std::string embodiment;
  std::map<std::string, Image> images;
  std::map<std::string, Eigen::VectorXf> proprio;
};

/// Task conditioning: an instruction id (0 = none / masked) and an optional
/// goal image stacked onto the matching view's channels.
struct TaskSpec {
  int instruction = 0;
  std::optional<Image> goal;
};

}  // namespace xembody
