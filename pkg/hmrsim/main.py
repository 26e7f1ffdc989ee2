from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from .db import Base, SessionLocal, engine
from .logs import configure_logging
from .routers.analytics import router as models_router
from .routers.calibration import router as calibration_router
from .routers.campaigns import router as campaigns_router
from .routers.runs import router as runs_router
from .seed import ensure_seed
from .settings import settings

app = FastAPI(title="HMR cluster simulator")


@app.on_event("startup")
def on_startup():
    configure_logging(settings.LOG_LEVEL)
    Base.metadata.create_all(bind=engine)
    db = SessionLocal()
    try:
        ensure_seed(db)
    finally:
        db.close()


app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


app.include_router(runs_router)
app.include_router(campaigns_router)
app.include_router(models_router)
app.include_router(calibration_router)


@app.get("/health")
def health():
    return {"ok": True}
