import logging

from ..data_types import RenderCommand, RenderResult
from ..file_formats import field_image, read_model, write_pgm

logger = logging.getLogger(__name__)


def render(command: RenderCommand) -> RenderResult:
    """
    Render a JSSM1 model as an 8-bit PGM image

    Args:
        command: RenderCommand with the model path, an optional output path and
            the slice index for 3D models

    Returns:
        RenderResult: Image path and dimensions
    """
    _, _, values = read_model(command.model_path)
    image = field_image(values, command.slice_index)
    output_path = command.output_path or command.model_path.with_suffix(".pgm")
    try:
        output_path.parent.mkdir(parents=True, exist_ok=True)
        write_pgm(output_path, image)
    except Exception as e:
        logger.error(f"Error writing image {output_path}: {e}")
        raise
    logger.info(f"Rendered {command.model_path} to {output_path}")
    height, width = image.shape
    return RenderResult(image_path=output_path, width=width, height=height)
