from typing import List

from fastapi import APIRouter, HTTPException

from ..constants.constants import DEFAULT_HORIZONS, MAZE_LAYOUTS
from ..errors import UnknownMazeError
from ..maze import make_maze, maze_to_ascii
from ..models import MazeInfo

router = APIRouter()


@router.get("", response_model=List[str])
async def list_mazes():
    """Known maze ids"""
    return sorted(MAZE_LAYOUTS)


@router.get("/{maze_id}", response_model=MazeInfo)
async def get_maze(maze_id: str):
    """Layout and episode settings of one maze"""
    try:
        spec = make_maze(maze_id)
    except UnknownMazeError:
        raise HTTPException(status_code=404, detail=f"Maze {maze_id!r} not found")

    return MazeInfo(
        id=spec.id,
        rows=spec.rows,
        cols=spec.cols,
        free_cells=len(spec.free_cells),
        episode_cap=spec.episode_cap,
        default_horizon=DEFAULT_HORIZONS[spec.id],
        ascii=maze_to_ascii(spec),
    )
