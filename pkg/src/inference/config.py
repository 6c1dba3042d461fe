from enum import Enum

from pydantic import BaseModel, ConfigDict, Field


class SolverKind(str, Enum):
    DDIM = "ddim"
    DPM_SOLVER_PP = "dpm-solver++"


class SamplerConfig(BaseModel):
    """Video sampling settings"""
    model_config = ConfigDict(extra="forbid")

    steps: int = Field(default=50, ge=1, description="Denoising steps")
    guidance_scale: float = Field(default=7.5, ge=1.0, description="Classifier-free guidance scale")
    frames: int = Field(default=8, ge=1, description="Frames per video")
    height: int = Field(default=32, gt=0, description="Frame height")
    width: int = Field(default=48, gt=0, description="Frame width")
    seed: int = Field(default=0, description="Seed of the initial noise")
    solver: SolverKind = Field(default=SolverKind.DDIM, description="Update rule")
    fps: int = Field(default=8, gt=0, description="Playback rate written to the manifest")
    clip_denoised: bool = Field(default=True, description="Clip predicted clean latents to [-1, 1]")
