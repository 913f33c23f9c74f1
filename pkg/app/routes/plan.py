import logging

import numpy as np
from fastapi import APIRouter, HTTPException

from ..errors import CheckpointError, SBPlanError, UnknownMazeError
from ..maze import make_maze
from ..models import PlanDump, PlanExecution, PlanRequest
from ..planner import PlannerModel, execute, planner_service, timed_plan

logger = logging.getLogger(__name__)

router = APIRouter()


def _model_for(req: PlanRequest) -> PlannerModel:
    if not planner_service.initialized:
        raise HTTPException(status_code=503, detail="Planner not initialized")
    try:
        return planner_service.find(req)
    except CheckpointError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))


def _check_task(req: PlanRequest) -> None:
    try:
        spec = make_maze(req.maze_id)
    except UnknownMazeError:
        raise HTTPException(status_code=404, detail=f"Maze {req.maze_id!r} not found")
    for name, point in (("start", req.start_state[:2]), ("goal", req.goal_position)):
        if not np.all(np.isfinite(point)) or not spec.is_free_position(point):
            raise HTTPException(status_code=400, detail=f"{name} position {point} is not in a free cell")


@router.post("", response_model=PlanDump)
async def create_plan(req: PlanRequest):
    """Sample one inpainted plan"""
    _check_task(req)
    model = _model_for(req)
    try:
        _, dump = timed_plan(req, model)
    except SBPlanError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Error planning for {req.maze_id}: {e}")
        raise HTTPException(status_code=500, detail=f"Error planning: {str(e)}")
    return dump


@router.post("/execute", response_model=PlanExecution)
async def plan_and_execute(req: PlanRequest):
    """Sample a plan and track it open-loop for one episode"""
    _check_task(req)
    model = _model_for(req)
    try:
        traj, dump = timed_plan(req, model)
        result = execute(make_maze(req.maze_id), traj, req.goal_position)
    except SBPlanError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Error executing plan for {req.maze_id}: {e}")
        raise HTTPException(status_code=500, detail=f"Error executing plan: {str(e)}")
    return PlanExecution(plan=dump, result=result)
