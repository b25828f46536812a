from .dataset import (
    FORMAT_VERSION,
    DatasetFile,
    DatasetFormatError,
    gen_maze_dataset,
    gen_prefix_sum_dataset,
    generate,
    load_dataset,
    save_dataset,
)
from .maze import (
    MazeInstance,
    gen_maze,
    image_side,
    locate_endpoints,
    maze_oracle_path,
    move_end_toward_start,
    render_maze,
)
from .prefix import BitStringInstance, encode_bits, prefix_sum_target

__all__ = [
    "FORMAT_VERSION",
    "BitStringInstance",
    "DatasetFile",
    "DatasetFormatError",
    "MazeInstance",
    "encode_bits",
    "gen_maze",
    "gen_maze_dataset",
    "gen_prefix_sum_dataset",
    "generate",
    "image_side",
    "load_dataset",
    "locate_endpoints",
    "maze_oracle_path",
    "move_end_toward_start",
    "prefix_sum_target",
    "render_maze",
    "save_dataset",
]
