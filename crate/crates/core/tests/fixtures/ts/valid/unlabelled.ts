@problemName NoLabels
@timeStamps false
@missing false
@univariate false
@dimensions 2
@equalLength true
@seriesLength 3
@classLabel false
@data
1.5,2.5,3.5:0,0,0
-1.5,-2.5,-3.5:1,1,1
