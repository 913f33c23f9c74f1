import uvicorn
import logging
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from contextlib import asynccontextmanager

from app.config.config import settings
from app.planner import planner_service
from app.routes import mazes, plan

# Configure logging
logging.basicConfig(level=settings.log_level)
logger = logging.getLogger(__name__)

@asynccontextmanager
async def lifespan(app: FastAPI):
    """Startup and shutdown events"""
    logger.info("Starting SB Planner API...")

    # Load trained planners
    try:
        await planner_service.initialize(settings.service_checkpoint_dir)
        logger.info("Planner service initialized successfully")
    except Exception as e:
        logger.warning(f"Could not initialize planner service: {e}")

    yield

    logger.info("Shutting down SB Planner API...")

# Create FastAPI app
app = FastAPI(
    title="SB Planner API",
    description="Diffusion and Schrodinger-bridge trajectory planning on Maze2D",
    version="1.0.0",
    lifespan=lifespan,
    openapi_tags=[
        {"name": "Mazes", "description": "Maze layouts"},
        {"name": "Planning", "description": "Plan sampling and open-loop execution"},
    ]
)

# Configure CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.get_cors_origins(),
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
app.include_router(mazes.router, prefix="/mazes", tags=["Mazes"])
app.include_router(plan.router, prefix="/plan", tags=["Planning"])

@app.get("/")
async def root():
    """Root endpoint"""
    return {
        "message": "SB Planner API",
        "version": "1.0.0",
        "status": "running",
        "models": len(planner_service.models),
    }

@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy"}

if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host="0.0.0.0",
        port=8000,
        reload=True
    )
